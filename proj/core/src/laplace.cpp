#include "bmoe/laplace.hpp"

#include <cmath>
#include <limits>

namespace bmoe {

EvidenceSign evidence_sign_from_string(const std::string& name) {
  if (name == "sigma") return EvidenceSign::kSigma;
  if (name == "h") return EvidenceSign::kH;
  throw std::invalid_argument("unknown evidence sign: " + name);
}

std::string to_string(EvidenceSign s) { return s == EvidenceSign::kSigma ? "sigma" : "h"; }

const Matrix& LaplacePosterior::map_weight(const ExpertId& id) const {
  return model.layers.at(id.layer).experts.at(id.index).w2;
}

void LaplacePosterior::validate() const {
  if (lambda <= 0.0) throw std::domain_error("LaplacePosterior: lambda must be > 0");
  for (const ExpertId& id : treated)
    if (!curvature.experts.count(id))
      throw std::invalid_argument("LaplacePosterior: treated expert " + to_string(id) +
                                  " has no curvature");
}

std::set<ExpertId> all_experts(const CurvatureSet& curvature) {
  std::set<ExpertId> out;
  for (const auto& [id, c] : curvature.experts) out.insert(id);
  return out;
}

LaplacePosterior make_posterior(const MoEModel& map_model, CurvatureSet curvature, double lambda,
                                std::set<ExpertId> treated) {
  LaplacePosterior post{map_model, std::move(curvature), lambda, std::move(treated)};
  post.validate();
  return post;
}

namespace {

// Nonnegative eigenvalues of the factor Gram, ascending.
Vector gram_eigenvalues(const LowRankFactor& f) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(f.gram());
  return es.eigenvalues().cwiseMax(0.0);
}

// Eigenvalues of the low-rank Fisher part (alpha_i * beta_j products).
std::vector<double> fisher_eigenvalues(const ExpertCurvature& c) {
  const Vector alpha = gram_eigenvalues(c.la);
  const Vector beta = gram_eigenvalues(c.lg);
  std::vector<double> mu;
  mu.reserve(alpha.size() * beta.size());
  for (Eigen::Index i = 0; i < alpha.size(); ++i)
    for (Eigen::Index j = 0; j < beta.size(); ++j) mu.push_back(alpha[i] * beta[j]);
  return mu;
}

}  // namespace

double logdet_precision(const ExpertCurvature& c, double lambda) {
  if (lambda <= 0.0) throw std::domain_error("logdet_precision: lambda must be > 0");
  const double dims = static_cast<double>(c.d_in()) * static_cast<double>(c.d_out());
  const std::vector<double> mu = fisher_eigenvalues(c);
  double out = (dims - static_cast<double>(mu.size())) * std::log(lambda);
  for (double m : mu) out += std::log(lambda + m);
  return out;
}

EvidenceReport evidence(const LaplacePosterior& post, const Dataset& data, EvidenceSign sign) {
  post.validate();
  if (data.empty()) throw std::invalid_argument("evidence: empty dataset");
  EvidenceReport rep;
  rep.lambda = post.lambda;
  rep.sign = sign;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector probs = softmax(forward(post.model, data.features[i]));
    rep.map_fit += std::log(std::max(probs[data.labels[i]], 1e-300));
  }
  const double s = (sign == EvidenceSign::kH) ? 1.0 : -1.0;
  for (const ExpertId& id : post.treated) {
    const ExpertCurvature& c = post.curvature.experts.at(id);
    const double ld = logdet_precision(c, post.lambda);
    rep.logdet_h[id] = ld;
    rep.logdet_term += 0.5 * s * ld;
    rep.prior_term -= 0.5 * post.lambda * post.map_weight(id).squaredNorm();
  }
  rep.total = rep.map_fit + rep.logdet_term + rep.prior_term;
  return rep;
}

LambdaTrajectory optimize_lambda_evidence(const LaplacePosterior& post, const Dataset& data,
                                          double eta, int steps, EvidenceSign sign) {
  post.validate();
  if (eta < 0.0) throw std::invalid_argument("optimize_lambda_evidence: eta must be >= 0");
  if (steps < 1) throw std::invalid_argument("optimize_lambda_evidence: steps must be >= 1");

  // map_fit is lambda-independent; fold it in once.
  double map_fit = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector probs = softmax(forward(post.model, data.features[i]));
    map_fit += std::log(std::max(probs[data.labels[i]], 1e-300));
  }

  struct ExpertTerm {
    double dims;
    std::vector<double> mu;
    double w_norm2;
  };
  std::vector<ExpertTerm> terms;
  for (const ExpertId& id : post.treated) {
    const ExpertCurvature& c = post.curvature.experts.at(id);
    terms.push_back({static_cast<double>(c.d_in()) * static_cast<double>(c.d_out()),
                     fisher_eigenvalues(c), post.map_weight(id).squaredNorm()});
  }
  const double s = (sign == EvidenceSign::kH) ? 1.0 : -1.0;

  auto objective = [&](double lambda) {
    double total = map_fit;
    for (const ExpertTerm& t : terms) {
      double ld = (t.dims - static_cast<double>(t.mu.size())) * std::log(lambda);
      for (double m : t.mu) ld += std::log(lambda + m);
      total += 0.5 * s * ld - 0.5 * lambda * t.w_norm2;
    }
    return total;
  };
  auto gradient_nu = [&](double lambda) {  // d objective / d log(lambda)
    double g = 0.0;
    for (const ExpertTerm& t : terms) {
      double dld = (t.dims - static_cast<double>(t.mu.size())) / lambda;
      for (double m : t.mu) dld += 1.0 / (lambda + m);
      g += 0.5 * s * dld - 0.5 * t.w_norm2;
    }
    return g * lambda;
  };

  LambdaTrajectory out;
  double nu = std::log(post.lambda);
  double value = objective(std::exp(nu));
  if (!std::isfinite(value)) {
    out.lambda = post.lambda;
    return out;
  }
  for (int step = 0; step < steps; ++step) {
    const double grad = gradient_nu(std::exp(nu));
    double step_size = eta;
    double candidate = nu;
    double candidate_value = value;
    for (int halving = 0; halving < 40; ++halving) {
      const double trial = nu + step_size * grad;
      const double trial_value = objective(std::exp(trial));
      if (std::isfinite(trial_value) && trial_value >= value) {
        candidate = trial;
        candidate_value = trial_value;
        break;
      }
      step_size *= 0.5;
      if (step_size * std::abs(grad) < 1e-16) break;
    }
    nu = candidate;
    value = candidate_value;
    out.evidence_values.push_back(value);
    if (!std::isfinite(value)) break;
  }
  out.lambda = std::exp(nu);
  return out;
}

double optimize_lambda_validation(const std::function<double(double)>& val_nll, double lo,
                                  double hi, double tol_log) {
  if (!(lo > 0.0) || !(hi >= lo))
    throw std::invalid_argument("optimize_lambda_validation: bad bracket");
  double a = std::log(lo), b = std::log(hi);
  if (b - a < tol_log) return std::exp(0.5 * (a + b));
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = val_nll(std::exp(c));
  double fd = val_nll(std::exp(d));
  while (b - a > tol_log) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = val_nll(std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = val_nll(std::exp(d));
    }
  }
  return std::exp(0.5 * (a + b));
}

}  // namespace bmoe
