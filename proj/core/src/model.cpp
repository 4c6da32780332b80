#include "bmoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bmoe/rng.hpp"

namespace bmoe {

namespace {

double act_value(Activation act, double z) {
  switch (act) {
    case Activation::kRelu:
      return z > 0.0 ? z : 0.0;
    case Activation::kGelu:
      return 0.5 * z * (1.0 + std::erf(z * M_SQRT1_2));
    case Activation::kSilu:
      return z / (1.0 + std::exp(-z));
  }
  return 0.0;
}

double act_deriv(Activation act, double z) {
  switch (act) {
    case Activation::kRelu:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::kGelu: {
      const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
      return 0.5 * (1.0 + std::erf(z * M_SQRT1_2)) + z * phi;
    }
    case Activation::kSilu: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 + z * (1.0 - s));
    }
  }
  return 0.0;
}

Matrix glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols, double gain) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.symmetric_uniform(bound);
  return m;
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "gelu") return Activation::kGelu;
  if (name == "silu") return Activation::kSilu;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kRelu: return "relu";
    case Activation::kGelu: return "gelu";
    case Activation::kSilu: return "silu";
  }
  return "?";
}

std::string to_string(const ExpertId& id) {
  return "L" + std::to_string(id.layer) + ".E" + std::to_string(id.index);
}

void MoEConfig::validate() const {
  if (num_layers < 1 || num_experts < 1 || d_model < 1 || d_ff < 1 || d_input < 1 ||
      num_classes < 1)
    throw std::invalid_argument("MoEConfig: all counts must be >= 1");
  if (top_k < 1 || top_k > num_experts)
    throw std::invalid_argument("MoEConfig: require 1 <= top_k <= num_experts");
}

MoEModel MoEModel::init(const MoEConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  MoEModel m;
  m.config = cfg;
  m.encoder = glorot(rng, cfg.d_model, cfg.d_input, 1.0);
  m.layers.resize(cfg.num_layers);
  for (auto& layer : m.layers) {
    layer.gate.w_gate = glorot(rng, cfg.num_experts, cfg.d_model, 0.1);
    layer.experts.resize(cfg.num_experts);
    for (auto& e : layer.experts) {
      e.w1 = glorot(rng, cfg.d_ff, cfg.d_model, 1.0);
      e.w2 = glorot(rng, cfg.d_model, cfg.d_ff, 1.0);
    }
  }
  m.head = glorot(rng, cfg.num_classes, cfg.d_model, 1.0);
  return m;
}

std::vector<ParamRef> param_refs(MoEModel& model) {
  std::vector<ParamRef> refs;
  refs.push_back({ParamGroup::kEncoder, -1, -1, &model.encoder, "encoder"});
  for (int l = 0; l < model.config.num_layers; ++l) {
    refs.push_back({ParamGroup::kGate, l, -1, &model.layers[l].gate.w_gate,
                    "layer" + std::to_string(l) + ".gate"});
    for (int e = 0; e < model.config.num_experts; ++e) {
      const std::string base = "layer" + std::to_string(l) + ".expert" + std::to_string(e);
      refs.push_back({ParamGroup::kW1, l, e, &model.layers[l].experts[e].w1, base + ".w1"});
      refs.push_back({ParamGroup::kW2, l, e, &model.layers[l].experts[e].w2, base + ".w2"});
    }
  }
  refs.push_back({ParamGroup::kHead, -1, -1, &model.head, "head"});
  return refs;
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

GateResult gate_scores(const Vector& x, const GateParams& gate, int top_k) {
  const Eigen::Index num_experts = gate.w_gate.rows();
  Vector scores = gate.w_gate * x;
  std::vector<int> order(num_experts);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> routed(order.begin(), order.begin() + top_k);
  std::sort(routed.begin(), routed.end());

  // Softmax over the kept scores only; equals renormalizing the full softmax.
  double max_kept = scores[routed[0]];
  for (int e : routed) max_kept = std::max(max_kept, scores[e]);
  double denom = 0.0;
  for (int e : routed) denom += std::exp(scores[e] - max_kept);
  Vector weights = Vector::Zero(num_experts);
  for (int e : routed) weights[e] = std::exp(scores[e] - max_kept) / denom;
  return {std::move(weights), std::move(routed)};
}

ExpertForwardResult expert_forward(const Vector& x, const ExpertParams& e, Activation act) {
  ExpertForwardResult r;
  r.z = e.w1 * x;
  r.a = r.z.unaryExpr([act](double v) { return act_value(act, v); });
  r.out = e.w2 * r.a;
  return r;
}

const Vector* ForwardTrace::activation_of(const ExpertId& expert) const {
  if (expert.layer < 0 || expert.layer >= static_cast<int>(layers.size())) return nullptr;
  const LayerTrace& lt = layers[expert.layer];
  for (std::size_t i = 0; i < lt.routed.size(); ++i)
    if (lt.routed[i] == expert.index) return &lt.activation[i];
  return nullptr;
}

Vector forward(const MoEModel& model, const Vector& x, ForwardTrace* trace) {
  const MoEConfig& cfg = model.config;
  if (x.size() != cfg.d_input) throw ShapeError("forward: input length != d_input");
  Vector h = model.encoder * x;
  if (trace) {
    trace->input = x;
    trace->encoded = h;
    trace->layers.clear();
    trace->layers.reserve(cfg.num_layers);
    trace->model_version = model.version;
  }
  for (const MoELayer& layer : model.layers) {
    GateResult gr = gate_scores(h, layer.gate, cfg.top_k);
    Vector out = cfg.residual ? h : Vector(Vector::Zero(cfg.d_model));
    LayerTrace lt;
    if (trace) {
      lt.input = h;
      lt.routed = gr.routed;
      lt.gate_weights = gr.weights;
    }
    for (int e : gr.routed) {
      ExpertForwardResult er = expert_forward(h, layer.experts[e], cfg.activation);
      out += gr.weights[e] * er.out;
      if (trace) {
        lt.preact.push_back(std::move(er.z));
        lt.activation.push_back(std::move(er.a));
        lt.pre_output.push_back(std::move(er.out));
      }
    }
    if (trace) trace->layers.push_back(std::move(lt));
    h = std::move(out);
  }
  Vector logits = model.head * h;
  if (trace) {
    trace->final_hidden = h;
    trace->logits = logits;
  }
  return logits;
}

GradientSet GradientSet::zeros(const MoEConfig& cfg) {
  GradientSet g;
  g.encoder = Matrix::Zero(cfg.d_model, cfg.d_input);
  g.head = Matrix::Zero(cfg.num_classes, cfg.d_model);
  g.gate.assign(cfg.num_layers, Matrix::Zero(cfg.num_experts, cfg.d_model));
  g.w1.assign(cfg.num_layers,
              std::vector<Matrix>(cfg.num_experts, Matrix::Zero(cfg.d_ff, cfg.d_model)));
  g.w2.assign(cfg.num_layers,
              std::vector<Matrix>(cfg.num_experts, Matrix::Zero(cfg.d_model, cfg.d_ff)));
  g.expert_output_grads.resize(cfg.num_layers);
  return g;
}

std::vector<const Matrix*> GradientSet::tensors() const {
  auto* self = const_cast<GradientSet*>(this);
  std::vector<Matrix*> mut = self->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<Matrix*> GradientSet::tensors() {
  std::vector<Matrix*> out;
  out.push_back(&encoder);
  for (std::size_t l = 0; l < gate.size(); ++l) {
    out.push_back(&gate[l]);
    for (std::size_t e = 0; e < w1[l].size(); ++e) {
      out.push_back(&w1[l][e]);
      out.push_back(&w2[l][e]);
    }
  }
  out.push_back(&head);
  return out;
}

void GradientSet::add_scaled(const GradientSet& other, double s) {
  auto mine = tensors();
  auto theirs = other.tensors();
  for (std::size_t i = 0; i < mine.size(); ++i) *mine[i] += s * *theirs[i];
}

double GradientSet::squared_norm() const {
  double total = 0.0;
  for (const Matrix* t : tensors()) total += t->squaredNorm();
  return total;
}

void GradientSet::scale(double s) {
  for (Matrix* t : tensors()) *t *= s;
}

GradientSet backward(const MoEModel& model, const ForwardTrace& trace, const Vector& dlogits) {
  const MoEConfig& cfg = model.config;
  if (trace.model_version != model.version)
    throw TraceError("backward: trace was captured on a different model version");
  if (static_cast<int>(trace.layers.size()) != cfg.num_layers)
    throw TraceError("backward: trace layer count mismatch");

  GradientSet g = GradientSet::zeros(cfg);
  g.head = dlogits * trace.final_hidden.transpose();
  Vector dh = model.head.transpose() * dlogits;

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const LayerTrace& lt = trace.layers[l];
    const MoELayer& layer = model.layers[l];
    const Vector& h_in = lt.input;
    Vector dh_in = cfg.residual ? dh : Vector(Vector::Zero(cfg.d_model));

    const int k = static_cast<int>(lt.routed.size());
    Vector dgate_weight(k);  // d(objective)/d(kept softmax weight)
    for (int i = 0; i < k; ++i) {
      const int e = lt.routed[i];
      const double w = lt.gate_weights[e];
      const Vector& a = lt.activation[i];
      const Vector& z = lt.preact[i];
      const Vector& b = lt.pre_output[i];

      dgate_weight[i] = dh.dot(b);
      Vector ge = w * dh;  // gradient w.r.t. b, gate weight folded in
      g.w2[l][e] += ge * a.transpose();
      g.expert_output_grads[l][e] = ge;

      Vector da = layer.experts[e].w2.transpose() * ge;
      Vector dz =
          da.array() * z.unaryExpr([&](double v) { return act_deriv(cfg.activation, v); }).array();
      g.w1[l][e] += dz * h_in.transpose();
      dh_in += layer.experts[e].w1.transpose() * dz;
    }

    // Softmax over kept scores: ds_i = q_i (dq_i - sum_j dq_j q_j).
    double inner = 0.0;
    for (int i = 0; i < k; ++i) inner += dgate_weight[i] * lt.gate_weights[lt.routed[i]];
    for (int i = 0; i < k; ++i) {
      const int e = lt.routed[i];
      const double ds = lt.gate_weights[e] * (dgate_weight[i] - inner);
      g.gate[l].row(e) += ds * h_in.transpose();
      dh_in += ds * layer.gate.w_gate.row(e).transpose();
    }
    dh = std::move(dh_in);
  }
  g.encoder = dh * trace.input.transpose();
  return g;
}

}  // namespace bmoe
