#include "bmoe/curvature.hpp"

#include <cmath>
#include <thread>

#include "bmoe/rng.hpp"

namespace bmoe {

FisherMode fisher_mode_from_string(const std::string& name) {
  if (name == "empirical") return FisherMode::kEmpirical;
  if (name == "sampled") return FisherMode::kSampled;
  throw std::invalid_argument("unknown fisher mode: " + name);
}

std::string to_string(FisherMode m) {
  return m == FisherMode::kEmpirical ? "empirical" : "sampled";
}

FisherNormalization fisher_normalization_from_string(const std::string& name) {
  if (name == "mean") return FisherNormalization::kMean;
  if (name == "sum") return FisherNormalization::kSum;
  throw std::invalid_argument("unknown fisher normalization: " + name);
}

std::string to_string(FisherNormalization n) {
  return n == FisherNormalization::kMean ? "mean" : "sum";
}

std::vector<ExpertId> CurvatureSet::never_routed() const {
  std::vector<ExpertId> out;
  for (const auto& [id, c] : experts)
    if (c.token_count == 0) out.push_back(id);
  return out;
}

namespace {

struct ExpertAccumulator {
  RsvdAccumulator la;
  RsvdAccumulator lg;
  std::int64_t token_count = 0;

  ExpertAccumulator(Eigen::Index d_in, Eigen::Index d_out, const SketchConfig& la_cfg,
                    const SketchConfig& lg_cfg)
      : la(d_in, la_cfg), lg(d_out, lg_cfg) {}
};

// Distinct sub-seeds per (expert, factor) so sketches are independent.
SketchConfig sub_config(const SketchConfig& cfg, const ExpertId& id, int which) {
  SketchConfig sub = cfg;
  sub.seed = mix_seed(cfg.seed, (static_cast<std::uint64_t>(id.layer) << 20) |
                                    (static_cast<std::uint64_t>(id.index) << 4) |
                                    static_cast<std::uint64_t>(which));
  return sub;
}

using AccumulatorMap = std::map<ExpertId, ExpertAccumulator>;

AccumulatorMap make_accumulators(const MoEConfig& cfg, const SketchConfig& sketch) {
  AccumulatorMap accs;
  for (int l = 0; l < cfg.num_layers; ++l)
    for (int e = 0; e < cfg.num_experts; ++e) {
      const ExpertId id{l, e};
      accs.emplace(id, ExpertAccumulator(cfg.d_ff, cfg.d_model, sub_config(sketch, id, 0),
                                         sub_config(sketch, id, 1)));
    }
  return accs;
}

void accumulate_range(const MoEModel& model, const Dataset& data, const SketchConfig& cfg,
                      FisherMode mode, std::size_t begin, std::size_t end, AccumulatorMap& accs) {
  for (std::size_t n = begin; n < end; ++n) {
    ForwardTrace trace;
    const Vector logits = forward(model, data.features[n], &trace);
    const Vector probs = softmax(logits);
    int y = data.labels[n];
    if (mode == FisherMode::kSampled) {
      Rng draw(mix_seed(cfg.seed ^ 0x5a5a5a5aULL, n));
      y = draw.categorical(probs);
    }
    Vector dlogits = -probs;
    dlogits[y] += 1.0;  // gradient of log P(y|x) w.r.t. logits
    const GradientSet grads = backward(model, trace, dlogits);
    for (int l = 0; l < model.config.num_layers; ++l) {
      const LayerTrace& lt = trace.layers[l];
      for (std::size_t i = 0; i < lt.routed.size(); ++i) {
        const ExpertId id{l, lt.routed[i]};
        ExpertAccumulator& acc = accs.at(id);
        acc.la.push(lt.activation[i]);
        acc.lg.push(grads.expert_output_grads[l].at(id.index));
        ++acc.token_count;
      }
    }
  }
}

ExpertCurvature finalize(const ExpertId& id, const ExpertAccumulator& acc,
                         FisherNormalization norm) {
  ExpertCurvature c;
  c.id = id;
  c.la = acc.la.factor();
  c.lg = acc.lg.factor();
  c.token_count = acc.token_count;
  if (norm == FisherNormalization::kMean && acc.token_count > 0) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(acc.token_count));
    c.la.factor *= scale;
    c.lg.factor *= scale;
  }
  return c;
}

}  // namespace

CurvatureSet accumulate(const MoEModel& model, const Dataset& data, const SketchConfig& cfg,
                        FisherMode mode, FisherNormalization normalization,
                        const std::string& checkpoint_id, int num_workers) {
  CurvatureSet set;
  set.sketch = cfg;
  set.mode = mode;
  set.normalization = normalization;
  set.checkpoint_id = checkpoint_id;

  const std::size_t n = data.size();
  num_workers = std::max(1, std::min<int>(num_workers, n == 0 ? 1 : static_cast<int>(n)));

  std::vector<AccumulatorMap> shards;
  shards.reserve(num_workers);
  for (int w = 0; w < num_workers; ++w) shards.push_back(make_accumulators(model.config, cfg));

  if (num_workers == 1) {
    accumulate_range(model, data, cfg, mode, 0, n, shards[0]);
  } else {
    std::vector<std::thread> workers;
    const std::size_t chunk = (n + num_workers - 1) / num_workers;
    for (int w = 0; w < num_workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      workers.emplace_back([&, w, begin, end] {
        accumulate_range(model, data, cfg, mode, begin, end, shards[w]);
      });
    }
    for (auto& t : workers) t.join();
    // Merge in fixed shard order for determinism.
    for (int w = 1; w < num_workers; ++w) {
      for (auto& [id, acc] : shards[0]) {
        const ExpertAccumulator& other = shards[w].at(id);
        acc.la.merge(other.la);
        acc.lg.merge(other.lg);
        acc.token_count += other.token_count;
      }
    }
  }

  for (const auto& [id, acc] : shards[0])
    set.experts.emplace(id, finalize(id, acc, normalization));
  return set;
}

CurvatureSet merge(const CurvatureSet& a, const CurvatureSet& b) {
  if (a.checkpoint_id != b.checkpoint_id)
    throw ProvenanceError("curvature merge: checkpoint mismatch (" + a.checkpoint_id + " vs " +
                          b.checkpoint_id + ")");
  if (a.sketch.seed != b.sketch.seed || a.sketch.target_rank != b.sketch.target_rank ||
      a.sketch.oversampling != b.sketch.oversampling)
    throw ProvenanceError("curvature merge: sketch config mismatch");
  if (a.normalization != b.normalization || a.mode != b.mode)
    throw ProvenanceError("curvature merge: mode/normalization mismatch");

  CurvatureSet out = a;
  for (auto& [id, ca] : out.experts) {
    const auto it = b.experts.find(id);
    if (it == b.experts.end()) continue;
    const ExpertCurvature& cb = it->second;
    const std::int64_t total = ca.token_count + cb.token_count;

    // Undo the per-set normalization, concatenate raw streams, re-truncate,
    // and re-normalize against the combined count.
    auto unscale = [&](const LowRankFactor& f, std::int64_t count) {
      Matrix raw = f.factor;
      if (a.normalization == FisherNormalization::kMean && count > 0)
        raw *= std::sqrt(static_cast<double>(count));
      return raw;
    };
    auto combine = [&](const LowRankFactor& fa, std::int64_t na, const LowRankFactor& fb,
                       std::int64_t nb, const SketchConfig& sub) {
      RsvdAccumulator acc(fa.dim(), sub);
      const Matrix ra = unscale(fa, na);
      const Matrix rb = unscale(fb, nb);
      for (Eigen::Index j = 0; j < ra.cols(); ++j)
        if (ra.col(j).squaredNorm() > 0.0) acc.push(ra.col(j));
      for (Eigen::Index j = 0; j < rb.cols(); ++j)
        if (rb.col(j).squaredNorm() > 0.0) acc.push(rb.col(j));
      LowRankFactor f = acc.factor();
      if (a.normalization == FisherNormalization::kMean && total > 0)
        f.factor /= std::sqrt(static_cast<double>(total));
      return f;
    };
    ca.la = combine(ca.la, ca.token_count, cb.la, cb.token_count, sub_config(a.sketch, id, 0));
    ca.lg = combine(ca.lg, ca.token_count, cb.lg, cb.token_count, sub_config(a.sketch, id, 1));
    ca.token_count = total;
  }
  return out;
}

}  // namespace bmoe
