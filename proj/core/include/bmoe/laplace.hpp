#pragma once

#include <functional>
#include <map>
#include <set>
#include <vector>

#include "bmoe/curvature.hpp"
#include "bmoe/data.hpp"
#include "bmoe/model.hpp"

namespace bmoe {

// Sign used for the per-expert log-determinant term of the evidence.
// kSigma uses +1/2 log|Sigma| = -1/2 log|H|; kH uses +1/2 log|H|, which is
// the form whose zero-curvature stationary point lies at an interior lambda.
enum class EvidenceSign { kSigma, kH };

EvidenceSign evidence_sign_from_string(const std::string& name);
std::string to_string(EvidenceSign s);

struct LaplacePosterior {
  MoEModel model;  // parameters at theta_MAP
  CurvatureSet curvature;
  double lambda = 1.0;
  std::set<ExpertId> treated;

  double sigma2() const { return 1.0 / lambda; }
  const Matrix& map_weight(const ExpertId& id) const;
  void validate() const;
};

// All experts covered by the curvature set.
std::set<ExpertId> all_experts(const CurvatureSet& curvature);

LaplacePosterior make_posterior(const MoEModel& map_model, CurvatureSet curvature, double lambda,
                                std::set<ExpertId> treated);

// log det(H) for H = (la kron lg)(la kron lg)^T + lambda I, computed from the
// r x r Gram eigenvalues: (d_in d_out - r^2) log lambda + sum_ij log(lambda +
// alpha_i beta_j). Exact for the low-rank-plus-identity precision.
double logdet_precision(const ExpertCurvature& c, double lambda);

struct EvidenceReport {
  double total = 0.0;
  double map_fit = 0.0;     // sum of log-likelihoods at theta_MAP
  double logdet_term = 0.0; // +-1/2 sum logdet, per sign convention
  double prior_term = 0.0;  // -lambda/2 sum ||W_MAP||_F^2 over treated experts
  double lambda = 0.0;
  EvidenceSign sign = EvidenceSign::kSigma;
  std::map<ExpertId, double> logdet_h;
};

EvidenceReport evidence(const LaplacePosterior& post, const Dataset& data,
                        EvidenceSign sign = EvidenceSign::kSigma);

struct LambdaTrajectory {
  double lambda = 0.0;
  std::vector<double> evidence_values;  // objective after each accepted step
};

// Gradient ascent on the evidence in nu = log lambda, analytic gradient from
// the Gram eigenvalues, with step backtracking so the trajectory is
// non-decreasing. Mutates nothing; returns the optimized lambda.
LambdaTrajectory optimize_lambda_evidence(const LaplacePosterior& post, const Dataset& data,
                                          double eta, int steps,
                                          EvidenceSign sign = EvidenceSign::kH);

// Golden-section search on log lambda in [lo, hi] minimizing the supplied
// validation-NLL functional (evaluated with a fixed MC seed by the caller).
double optimize_lambda_validation(const std::function<double(double)>& val_nll,
                                  double lo = 1e-4, double hi = 1e4, double tol_log = 1e-3);

}  // namespace bmoe
