#pragma once

#include <map>
#include <optional>
#include <vector>

#include "bmoe/laplace.hpp"
#include "bmoe/model.hpp"

namespace bmoe {

struct PredictiveDistribution {
  Vector mean_logits;           // f_MAP(x*)
  Matrix covariance;            // class-space covariance, symmetrized
  std::optional<Matrix> chol;   // lower factor, filled lazily by mc_predict
};

struct McConfig {
  int samples = 1024;
  std::uint64_t seed = 0;
};

// Per-class weight-space Jacobians of the logits w.r.t. each routed expert's
// second layer: G_i = (df_i/db) a^T, one backward pass per class.
std::map<ExpertId, std::vector<Matrix>> expert_jacobians(const MoEModel& model,
                                                         const ForwardTrace& trace);

// The linearized mean at the expansion point is exactly the MAP forward pass.
Vector linearized_mean(const MoEModel& model, const Vector& x);

// (1/S) sum softmax(mean + L xi), xi iid standard normal from cfg.seed.
Vector mc_predict(PredictiveDistribution& dist, const McConfig& cfg);

// Precomputes per-expert Woodbury state (scaled factors, M = I + sigma^2
// C_a kron C_g and its Cholesky) shared across test points.
class PosteriorPredictor {
 public:
  explicit PosteriorPredictor(const LaplacePosterior& post);

  PredictiveDistribution distribution(const Vector& x) const;

  struct Prediction {
    Vector mean_logits;
    Vector probs_map;
    Vector probs_bayes;
  };
  Prediction predict(const Vector& x, const McConfig& mc) const;

  const LaplacePosterior& posterior() const { return *post_; }
  bool had_solve_fallback() const { return solve_fallback_; }

 private:
  struct ExpertState {
    Matrix la;  // d_in x r
    Matrix lg;  // d_out x r
    Eigen::LLT<Matrix> m_chol;           // of M (r^2 x r^2)
    std::optional<Matrix> m_pinv;        // fallback when LLT fails
  };

  Matrix covariance(const ForwardTrace& trace) const;

  const LaplacePosterior* post_;
  std::map<ExpertId, ExpertState> state_;
  mutable bool solve_fallback_ = false;
};

}  // namespace bmoe
