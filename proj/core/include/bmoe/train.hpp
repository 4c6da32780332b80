#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "bmoe/data.hpp"
#include "bmoe/model.hpp"

namespace bmoe {

enum class LrSchedule { kConstant, kLinear, kCosine };

LrSchedule schedule_from_string(const std::string& name);
std::string to_string(LrSchedule s);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay_lambda = 1e-3;  // lambda of the MAP objective
  std::array<double, 2> betas = {0.9, 0.95};
  double grad_clip = 1.0;
  LrSchedule schedule = LrSchedule::kConstant;
  std::uint64_t seed = 0;
  std::set<ParamGroup> frozen;
  int eval_interval = 50;

  void validate() const;
};

struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& msg, int example_index)
      : std::runtime_error(msg), index(example_index) {}
  int index;
};

struct BatchObjective {
  double loss = 0.0;
  GradientSet grads;
};

// Cross-entropy over the batch slice plus (lambda/2) ||theta||^2 over
// non-frozen parameters; gradients include the lambda * theta contribution
// so a stationary point is a true MAP point.
BatchObjective map_objective(const MoEModel& model, const Dataset& data,
                             const std::vector<int>& indices, double lambda,
                             const std::set<ParamGroup>& frozen = {});

struct LossCurveRow {
  int step;
  double train_loss;
  double val_loss;
  double val_acc;
};

struct TrainResult {
  MoEModel model;  // best-on-validation checkpoint
  std::vector<LossCurveRow> curve;
  bool diverged = false;
  double best_val_loss = 0.0;
};

// Per-example mean cross-entropy and accuracy at the current parameters.
std::pair<double, double> evaluate_loss_acc(const MoEModel& model, const Dataset& data);

TrainResult train(const MoEModel& init, const Dataset& train_data, const Dataset& val_data,
                  const TrainConfig& cfg);

void write_loss_curve_csv(const std::vector<LossCurveRow>& curve, const std::string& path);

}  // namespace bmoe
