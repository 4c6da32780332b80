#include <doctest.h>

#include "bmoe/curvature.hpp"
#include "bmoe/rng.hpp"
#include "oracle/dense_oracle.hpp"

using namespace bmoe;

namespace {

MoEConfig small_config() {
  MoEConfig cfg;
  cfg.num_layers = 2;
  cfg.num_experts = 3;
  cfg.top_k = 2;
  cfg.d_model = 4;
  cfg.d_ff = 6;
  cfg.d_input = 5;
  cfg.num_classes = 3;
  cfg.seed = 2;
  return cfg;
}

Dataset make_dataset(int n, int dim, int classes, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.split = "train";
  for (int i = 0; i < n; ++i) {
    ds.features.push_back(rng.normal_vector(dim));
    ds.labels.push_back(static_cast<int>(rng.next_u64() % classes));
  }
  return ds;
}

SketchConfig sketch(int rank, std::uint64_t seed) {
  SketchConfig cfg;
  cfg.target_rank = rank;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("single example: implied Kronecker block equals the outer gradient product") {
  const MoEConfig cfg = small_config();
  const MoEModel model = MoEModel::init(cfg);
  const Dataset one = make_dataset(1, cfg.d_input, cfg.num_classes, 31);

  const CurvatureSet set = accumulate(model, one, sketch(8, 13), FisherMode::kEmpirical,
                                      FisherNormalization::kSum, "ck");

  // Reference per-expert gradient of the log-likelihood.
  ForwardTrace trace;
  const Vector probs = softmax(forward(model, one.features[0], &trace));
  Vector dlogits = -probs;
  dlogits[one.labels[0]] += 1.0;
  const GradientSet grads = backward(model, trace, dlogits);

  int checked = 0;
  for (const auto& [id, c] : set.experts) {
    if (c.token_count == 0) continue;
    REQUIRE(c.token_count == 1);
    const Matrix implied = oracle::kron(c.la.implied(), c.lg.implied());
    const Vector dw = oracle::vec(grads.w2[id.layer][id.index]);
    const Matrix outer = dw * dw.transpose();
    CHECK((implied - outer).cwiseAbs().maxCoeff() < 1e-12);
    ++checked;
  }
  CHECK(checked == 2 * cfg.top_k);  // top_k routed experts per layer
}

TEST_CASE("mean normalization scales factors by 1/sqrt(token count)") {
  const MoEConfig cfg = small_config();
  const MoEModel model = MoEModel::init(cfg);
  const Dataset data = make_dataset(40, cfg.d_input, cfg.num_classes, 7);

  const CurvatureSet mean_set = accumulate(model, data, sketch(6, 5), FisherMode::kEmpirical,
                                           FisherNormalization::kMean, "ck");
  const CurvatureSet sum_set = accumulate(model, data, sketch(6, 5), FisherMode::kEmpirical,
                                          FisherNormalization::kSum, "ck");
  for (const auto& [id, cm] : mean_set.experts) {
    const ExpertCurvature& cs = sum_set.experts.at(id);
    REQUIRE(cm.token_count == cs.token_count);
    if (cm.token_count == 0) continue;
    const double scale = 1.0 / std::sqrt(static_cast<double>(cm.token_count));
    CHECK((cm.la.factor - scale * cs.la.factor).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((cm.lg.factor - scale * cs.lg.factor).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("sampled mode is deterministic and differs from empirical") {
  const MoEConfig cfg = small_config();
  const MoEModel model = MoEModel::init(cfg);
  const Dataset data = make_dataset(30, cfg.d_input, cfg.num_classes, 17);

  const CurvatureSet a = accumulate(model, data, sketch(6, 3), FisherMode::kSampled,
                                    FisherNormalization::kMean, "ck");
  const CurvatureSet b = accumulate(model, data, sketch(6, 3), FisherMode::kSampled,
                                    FisherNormalization::kMean, "ck");
  const CurvatureSet e = accumulate(model, data, sketch(6, 3), FisherMode::kEmpirical,
                                    FisherNormalization::kMean, "ck");
  double max_ab = 0.0, max_ae = 0.0;
  for (const auto& [id, ca] : a.experts) {
    max_ab = std::max(max_ab,
                      (ca.lg.factor - b.experts.at(id).lg.factor).cwiseAbs().maxCoeff());
    max_ae = std::max(max_ae,
                      (ca.lg.factor - e.experts.at(id).lg.factor).cwiseAbs().maxCoeff());
  }
  CHECK(max_ab == 0.0);
  CHECK(max_ae > 0.0);
}

TEST_CASE("multi-worker accumulation preserves token counts and the implied blocks") {
  const MoEConfig cfg = small_config();
  const MoEModel model = MoEModel::init(cfg);
  const Dataset data = make_dataset(60, cfg.d_input, cfg.num_classes, 23);

  const CurvatureSet one = accumulate(model, data, sketch(10, 9), FisherMode::kEmpirical,
                                      FisherNormalization::kMean, "ck", 1);
  const CurvatureSet four = accumulate(model, data, sketch(10, 9), FisherMode::kEmpirical,
                                       FisherNormalization::kMean, "ck", 4);
  for (const auto& [id, c1] : one.experts) {
    const ExpertCurvature& c4 = four.experts.at(id);
    CHECK(c1.token_count == c4.token_count);
    // Sketched subspaces differ by compression order; the implied blocks of
    // well-captured streams should still agree closely.
    const Matrix d = c1.la.implied() - c4.la.implied();
    CHECK(d.norm() < 1e-6 * std::max(1.0, c1.la.implied().norm()));
  }
}

TEST_CASE("never_routed lists experts with zero tokens") {
  MoEConfig cfg = small_config();
  cfg.top_k = 1;
  cfg.num_experts = 8;  // with one route per layer some experts starve
  const MoEModel model = MoEModel::init(cfg);
  const Dataset data = make_dataset(5, cfg.d_input, cfg.num_classes, 2);
  const CurvatureSet set = accumulate(model, data, sketch(4, 1), FisherMode::kEmpirical,
                                      FisherNormalization::kMean, "ck");
  const auto starved = set.never_routed();
  CHECK_FALSE(starved.empty());
  for (const ExpertId& id : starved) {
    CHECK(set.experts.at(id).token_count == 0);
    CHECK(set.experts.at(id).la.factor.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("merge validates provenance and adds token counts") {
  const MoEConfig cfg = small_config();
  const MoEModel model = MoEModel::init(cfg);
  const Dataset d1 = make_dataset(20, cfg.d_input, cfg.num_classes, 4);
  const Dataset d2 = make_dataset(25, cfg.d_input, cfg.num_classes, 5);

  const CurvatureSet a = accumulate(model, d1, sketch(8, 7), FisherMode::kEmpirical,
                                    FisherNormalization::kMean, "ck");
  const CurvatureSet b = accumulate(model, d2, sketch(8, 7), FisherMode::kEmpirical,
                                    FisherNormalization::kMean, "ck");
  const CurvatureSet m = merge(a, b);
  for (const auto& [id, c] : m.experts)
    CHECK(c.token_count == a.experts.at(id).token_count + b.experts.at(id).token_count);

  CurvatureSet wrong_ck = b;
  wrong_ck.checkpoint_id = "other";
  CHECK_THROWS_AS(merge(a, wrong_ck), ProvenanceError);
  CurvatureSet wrong_sketch = b;
  wrong_sketch.sketch.seed += 1;
  CHECK_THROWS_AS(merge(a, wrong_sketch), ProvenanceError);
  CurvatureSet wrong_norm = b;
  wrong_norm.normalization = FisherNormalization::kSum;
  CHECK_THROWS_AS(merge(a, wrong_norm), ProvenanceError);
}

TEST_CASE("mode and normalization string round trips") {
  CHECK(fisher_mode_from_string(to_string(FisherMode::kSampled)) == FisherMode::kSampled);
  CHECK(fisher_normalization_from_string(to_string(FisherNormalization::kSum)) ==
        FisherNormalization::kSum);
  CHECK_THROWS(fisher_mode_from_string("exact"));
}
