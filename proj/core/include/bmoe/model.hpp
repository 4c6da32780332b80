#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bmoe/linalg.hpp"

namespace bmoe {

enum class Activation { kRelu, kGelu, kSilu };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation act);

struct MoEConfig {
  int num_layers = 4;
  int num_experts = 8;
  int top_k = 2;
  int d_model = 16;
  int d_ff = 32;
  int d_input = 10;
  int num_classes = 3;
  Activation activation = Activation::kRelu;
  bool residual = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ExpertParams {
  Matrix w1;  // d_ff x d_model
  Matrix w2;  // d_model x d_ff (the Bayesian-treated layer)
};

struct GateParams {
  Matrix w_gate;  // num_experts x d_model
};

struct MoELayer {
  GateParams gate;
  std::vector<ExpertParams> experts;
};

struct ExpertId {
  int layer;   // 0-based
  int index;   // 0-based expert index within the layer
  auto operator<=>(const ExpertId&) const = default;
};

std::string to_string(const ExpertId& id);

struct MoEModel {
  MoEConfig config;
  Matrix encoder;  // d_model x d_input
  std::vector<MoELayer> layers;
  Matrix head;  // num_classes x d_model
  std::uint64_t version = 0;

  // Seeded Glorot-uniform init; gate weights scaled down 10x.
  static MoEModel init(const MoEConfig& cfg);
};

enum class ParamGroup { kEncoder, kGate, kW1, kW2, kHead };

struct ParamRef {
  ParamGroup group;
  int layer;   // -1 for encoder/head
  int expert;  // -1 unless w1/w2
  Matrix* tensor;
  std::string name;  // stable tensor name used in checkpoints
};

// Parameter tensors in a fixed, documented order:
// encoder, then per layer (gate, expert0.w1, expert0.w2, ...), then head.
std::vector<ParamRef> param_refs(MoEModel& model);

struct GateResult {
  Vector weights;           // length num_experts; exact zeros off the routed set
  std::vector<int> routed;  // ascending expert ids, size top_k
};

// Softmax over s_i = w_i^T x, top-k kept and renormalized. Ties broken by
// lowest expert id.
GateResult gate_scores(const Vector& x, const GateParams& gate, int top_k);

struct ExpertForwardResult {
  Vector out;  // d_model
  Vector a;    // d_ff, post-nonlinearity
  Vector z;    // d_ff, pre-nonlinearity
};

ExpertForwardResult expert_forward(const Vector& x, const ExpertParams& e, Activation act);

struct LayerTrace {
  Vector input;  // layer input h
  std::vector<int> routed;
  Vector gate_weights;             // full length num_experts
  std::vector<Vector> preact;      // per routed expert, z
  std::vector<Vector> activation;  // per routed expert, a
  std::vector<Vector> pre_output;  // per routed expert, b = w2 a (pre-gate)
};

struct ForwardTrace {
  Vector input;
  Vector encoded;
  std::vector<LayerTrace> layers;
  Vector final_hidden;
  Vector logits;
  std::uint64_t model_version = 0;

  // Activation of `expert` captured at its layer, or nullptr if not routed.
  const Vector* activation_of(const ExpertId& expert) const;
};

// Logits for x; fills *trace when non-null. Trace capture does not change
// the computed logits.
Vector forward(const MoEModel& model, const Vector& x, ForwardTrace* trace = nullptr);

struct TraceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GradientSet {
  Matrix encoder;
  std::vector<Matrix> gate;                 // per layer
  std::vector<std::vector<Matrix>> w1, w2;  // per layer, per expert
  Matrix head;
  // d(objective)/d(pre-gate expert output b), per layer keyed by expert index.
  // Includes the gate weight factor, so d(objective)/dW2 = g a^T.
  std::vector<std::map<int, Vector>> expert_output_grads;

  static GradientSet zeros(const MoEConfig& cfg);
  std::vector<const Matrix*> tensors() const;
  std::vector<Matrix*> tensors();
  void add_scaled(const GradientSet& other, double scale);
  double squared_norm() const;
  void scale(double s);
};

// Reverse pass seeded with d(objective)/d(logits). Routing is treated as
// piecewise-constant: no gradient through the top-k selection, gradient does
// flow through the kept softmax weights.
GradientSet backward(const MoEModel& model, const ForwardTrace& trace, const Vector& dlogits);

Vector softmax(const Vector& logits);

}  // namespace bmoe
