#include "bmoe/predictive.hpp"

#include <cmath>

#include "bmoe/rng.hpp"

namespace bmoe {

std::map<ExpertId, std::vector<Matrix>> expert_jacobians(const MoEModel& model,
                                                         const ForwardTrace& trace) {
  const int num_classes = model.config.num_classes;
  std::map<ExpertId, std::vector<Matrix>> out;
  for (int i = 0; i < num_classes; ++i) {
    Vector seed = Vector::Zero(num_classes);
    seed[i] = 1.0;
    const GradientSet g = backward(model, trace, seed);
    for (int l = 0; l < model.config.num_layers; ++l) {
      for (const auto& [e, ge] : g.expert_output_grads[l]) {
        const ExpertId id{l, e};
        const Vector* a = trace.activation_of(id);
        auto [it, inserted] = out.try_emplace(id);
        if (inserted) it->second.reserve(num_classes);
        it->second.push_back(ge * a->transpose());  // d_out x d_in
      }
    }
  }
  return out;
}

Vector linearized_mean(const MoEModel& model, const Vector& x) { return forward(model, x); }

Vector mc_predict(PredictiveDistribution& dist, const McConfig& cfg) {
  if (cfg.samples < 1) throw std::invalid_argument("mc_predict: samples must be >= 1");
  const Eigen::Index k = dist.mean_logits.size();
  if (!dist.chol) {
    if (dist.covariance.cwiseAbs().maxCoeff() == 0.0) {
      dist.chol = Matrix::Zero(k, k);
    } else {
      dist.chol = cholesky(dist.covariance);
    }
  }
  Rng rng(cfg.seed);
  Vector mean_probs = Vector::Zero(k);
  for (int s = 0; s < cfg.samples; ++s) {
    const Vector xi = rng.normal_vector(k);
    mean_probs += softmax(dist.mean_logits + *dist.chol * xi);
  }
  mean_probs /= static_cast<double>(cfg.samples);
  return mean_probs;
}

PosteriorPredictor::PosteriorPredictor(const LaplacePosterior& post) : post_(&post) {
  post.validate();
  const double sigma2 = post.sigma2();
  for (const ExpertId& id : post.treated) {
    const ExpertCurvature& c = post.curvature.experts.at(id);
    ExpertState st;
    st.la = c.la.factor;
    st.lg = c.lg.factor;
    const Matrix m = Matrix::Identity(st.la.cols() * st.lg.cols(), st.la.cols() * st.lg.cols()) +
                     sigma2 * kron(c.la.gram(), c.lg.gram());
    st.m_chol.compute(m);
    if (st.m_chol.info() != Eigen::Success) {
      // M = I + PSD should always factor; fall back to a pseudo-inverse.
      solve_fallback_ = true;
      st.m_pinv = m.completeOrthogonalDecomposition().pseudoInverse();
    }
    state_.emplace(id, std::move(st));
  }
}

Matrix PosteriorPredictor::covariance(const ForwardTrace& trace) const {
  const MoEModel& model = post_->model;
  const int num_classes = model.config.num_classes;
  const double sigma2 = post_->sigma2();
  Matrix lambda_cov = Matrix::Zero(num_classes, num_classes);

  const auto jacobians = expert_jacobians(model, trace);
  for (const auto& [id, gs] : jacobians) {
    const auto it = state_.find(id);
    if (it == state_.end()) continue;  // expert routed but not treated
    const ExpertState& st = it->second;
    const Eigen::Index r2 = st.la.cols() * st.lg.cols();

    // Frobenius-product (prior) part and projected factors.
    Matrix projected(r2, num_classes);  // column i = vec(lg^T G_i la)
    for (int i = 0; i < num_classes; ++i) {
      const Matrix t = st.lg.transpose() * gs[i] * st.la;  // r x r
      projected.col(i) = Eigen::Map<const Vector>(t.data(), t.size());
      for (int j = 0; j <= i; ++j) {
        const double fro = gs[i].cwiseProduct(gs[j]).sum();
        lambda_cov(i, j) += sigma2 * fro;
        if (j != i) lambda_cov(j, i) += sigma2 * fro;
      }
    }
    const Matrix solved =
        st.m_pinv ? Matrix(*st.m_pinv * projected) : Matrix(st.m_chol.solve(projected));
    lambda_cov -= sigma2 * sigma2 * projected.transpose() * solved;
  }
  return 0.5 * (lambda_cov + lambda_cov.transpose());
}

PredictiveDistribution PosteriorPredictor::distribution(const Vector& x) const {
  ForwardTrace trace;
  PredictiveDistribution dist;
  dist.mean_logits = forward(post_->model, x, &trace);
  dist.covariance = covariance(trace);
  return dist;
}

PosteriorPredictor::Prediction PosteriorPredictor::predict(const Vector& x,
                                                           const McConfig& mc) const {
  PredictiveDistribution dist = distribution(x);
  Prediction p;
  p.mean_logits = dist.mean_logits;
  p.probs_map = softmax(dist.mean_logits);
  p.probs_bayes = mc_predict(dist, mc);
  return p;
}

}  // namespace bmoe
