#include "bmoe/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "bmoe/rng.hpp"

namespace bmoe {

LrSchedule schedule_from_string(const std::string& name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "linear") return LrSchedule::kLinear;
  if (name == "cosine") return LrSchedule::kCosine;
  throw std::invalid_argument("unknown schedule: " + name);
}

std::string to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::kConstant: return "constant";
    case LrSchedule::kLinear: return "linear";
    case LrSchedule::kCosine: return "cosine";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (lr < 0.0) throw std::invalid_argument("TrainConfig: lr must be >= 0");
  if (weight_decay_lambda < 0.0)
    throw std::invalid_argument("TrainConfig: weight_decay_lambda must be >= 0");
  for (double b : betas)
    if (b < 0.0 || b >= 1.0) throw std::invalid_argument("TrainConfig: betas must be in [0,1)");
}

namespace {

bool group_frozen(const std::set<ParamGroup>& frozen, ParamGroup g) {
  return frozen.count(g) > 0;
}

// Tensor order of GradientSet::tensors() matches param_refs().
std::vector<ParamGroup> tensor_groups(const MoEConfig& cfg) {
  std::vector<ParamGroup> groups;
  groups.push_back(ParamGroup::kEncoder);
  for (int l = 0; l < cfg.num_layers; ++l) {
    groups.push_back(ParamGroup::kGate);
    for (int e = 0; e < cfg.num_experts; ++e) {
      groups.push_back(ParamGroup::kW1);
      groups.push_back(ParamGroup::kW2);
    }
  }
  groups.push_back(ParamGroup::kHead);
  return groups;
}

}  // namespace

BatchObjective map_objective(const MoEModel& model, const Dataset& data,
                             const std::vector<int>& indices, double lambda,
                             const std::set<ParamGroup>& frozen) {
  if (indices.empty()) throw std::invalid_argument("map_objective: empty batch");
  BatchObjective out;
  out.grads = GradientSet::zeros(model.config);
  for (int idx : indices) {
    ForwardTrace trace;
    const Vector logits = forward(model, data.features[idx], &trace);
    const Vector probs = softmax(logits);
    const int y = data.labels[idx];
    const double ll = std::log(std::max(probs[y], 1e-300));
    out.loss -= ll;
    if (!std::isfinite(out.loss))
      throw DivergenceError("map_objective: non-finite loss", idx);
    Vector dlogits = probs;
    dlogits[y] -= 1.0;
    out.grads.add_scaled(backward(model, trace, dlogits), 1.0);
  }
  if (lambda > 0.0) {
    MoEModel& mut = const_cast<MoEModel&>(model);
    auto refs = param_refs(mut);
    auto grad_tensors = out.grads.tensors();
    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (group_frozen(frozen, refs[i].group)) continue;
      out.loss += 0.5 * lambda * refs[i].tensor->squaredNorm();
      *grad_tensors[i] += lambda * *refs[i].tensor;
    }
  }
  return out;
}

std::pair<double, double> evaluate_loss_acc(const MoEModel& model, const Dataset& data) {
  double loss = 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector probs = softmax(forward(model, data.features[i]));
    loss -= std::log(std::max(probs[data.labels[i]], 1e-300));
    Eigen::Index argmax = 0;
    probs.maxCoeff(&argmax);
    if (static_cast<int>(argmax) == data.labels[i]) ++correct;
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, correct / n};
}

TrainResult train(const MoEModel& init, const Dataset& train_data, const Dataset& val_data,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_data.empty()) throw std::invalid_argument("train: empty training set");

  TrainResult result;
  result.model = init;
  if (cfg.steps == 0) return result;

  MoEModel model = init;
  GradientSet m1 = GradientSet::zeros(model.config);
  GradientSet m2 = GradientSet::zeros(model.config);
  const std::vector<ParamGroup> groups = tensor_groups(model.config);

  Rng rng(cfg.seed);
  std::vector<int> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces an initial shuffle

  MoEModel best = init;
  double best_val = std::numeric_limits<double>::infinity();
  bool have_best = false;

  auto eval_checkpoint = [&](int step, double train_loss) {
    if (val_data.empty()) {
      best = model;
      have_best = true;
      return;
    }
    auto [val_loss, val_acc] = evaluate_loss_acc(model, val_data);
    result.curve.push_back({step, train_loss, val_loss, val_acc});
    if (val_loss < best_val) {
      best_val = val_loss;
      best = model;
      have_best = true;
    }
  };

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int> batch;
    batch.reserve(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (cursor >= order.size()) {
        // Fisher-Yates reshuffle at epoch boundaries.
        for (std::size_t j = order.size() - 1; j > 0; --j) {
          const std::size_t k = rng.next_u64() % (j + 1);
          std::swap(order[j], order[k]);
        }
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    BatchObjective obj;
    try {
      obj = map_objective(model, train_data, batch, cfg.weight_decay_lambda, cfg.frozen);
    } catch (const DivergenceError&) {
      result.diverged = true;
      break;
    }

    if (cfg.grad_clip > 0.0) {
      const double norm = std::sqrt(obj.grads.squared_norm());
      if (norm > cfg.grad_clip) obj.grads.scale(cfg.grad_clip / norm);
    }

    double lr = cfg.lr;
    const double progress = static_cast<double>(step) / cfg.steps;
    if (cfg.schedule == LrSchedule::kLinear) lr *= 1.0 - progress;
    else if (cfg.schedule == LrSchedule::kCosine) lr *= 0.5 * (1.0 + std::cos(M_PI * progress));

    const double bc1 = 1.0 - std::pow(cfg.betas[0], step);
    const double bc2 = 1.0 - std::pow(cfg.betas[1], step);
    auto params = param_refs(model);
    auto g = obj.grads.tensors();
    auto t1 = m1.tensors();
    auto t2 = m2.tensors();
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (group_frozen(cfg.frozen, groups[i])) continue;
      *t1[i] = cfg.betas[0] * *t1[i] + (1.0 - cfg.betas[0]) * *g[i];
      *t2[i] = cfg.betas[1] * *t2[i] + (1.0 - cfg.betas[1]) * g[i]->cwiseProduct(*g[i]);
      const Matrix mhat = *t1[i] / bc1;
      const Matrix vhat = *t2[i] / bc2;
      *params[i].tensor -=
          lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + 1e-8).matrix());
    }
    ++model.version;

    if (step % cfg.eval_interval == 0 || step == cfg.steps)
      eval_checkpoint(step, obj.loss / batch.size());
  }

  if (!have_best) eval_checkpoint(cfg.steps, 0.0);
  result.model = have_best ? best : model;
  if (!val_data.empty() && have_best) result.best_val_loss = best_val;
  return result;
}

void write_loss_curve_csv(const std::vector<LossCurveRow>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss curve: " + path);
  out << "step,train_loss,val_loss,val_acc\n";
  out.precision(12);
  for (const auto& row : curve)
    out << row.step << "," << row.train_loss << "," << row.val_loss << "," << row.val_acc << "\n";
}

}  // namespace bmoe
