#include <doctest.h>

#include <cmath>

#include "bmoe/laplace.hpp"
#include "bmoe/rng.hpp"
#include "oracle/dense_oracle.hpp"

using namespace bmoe;

namespace {

ExpertCurvature random_curvature(int d_in, int d_out, int rank, std::uint64_t seed) {
  Rng rng(seed);
  ExpertCurvature c;
  c.id = {0, 0};
  c.la = LowRankFactor(rng.gaussian_matrix(d_in, rank));
  c.lg = LowRankFactor(rng.gaussian_matrix(d_out, rank));
  c.token_count = 10;
  return c;
}

// A posterior whose treated experts all have zero curvature factors.
LaplacePosterior zero_curvature_posterior(std::uint64_t seed) {
  MoEConfig cfg;
  cfg.num_layers = 2;
  cfg.num_experts = 2;
  cfg.top_k = 1;
  cfg.d_model = 4;
  cfg.d_ff = 5;
  cfg.d_input = 3;
  cfg.seed = seed;
  const MoEModel model = MoEModel::init(cfg);
  CurvatureSet curv;
  curv.sketch.target_rank = 3;
  for (int l = 0; l < cfg.num_layers; ++l)
    for (int e = 0; e < cfg.num_experts; ++e) {
      ExpertCurvature c;
      c.id = {l, e};
      c.la = LowRankFactor::zero(cfg.d_ff, 3);
      c.lg = LowRankFactor::zero(cfg.d_model, 3);
      curv.experts.emplace(c.id, std::move(c));
    }
  return make_posterior(model, curv, 1.0, all_experts(curv));
}

Dataset tiny_data(const MoEConfig& cfg, int n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.split = "train";
  for (int i = 0; i < n; ++i) {
    ds.features.push_back(rng.normal_vector(cfg.d_input));
    ds.labels.push_back(static_cast<int>(rng.next_u64() % cfg.num_classes));
  }
  return ds;
}

}  // namespace

TEST_CASE("logdet_precision is exact against the dense oracle") {
  for (int trial = 0; trial < 10; ++trial) {
    const int d_in = 4 + trial % 3;
    const int d_out = 8;  // d_in * d_out <= 64 inside the oracle guard
    const int rank = 1 + trial % 3;
    const ExpertCurvature c = random_curvature(d_in, d_out, rank, 100 + trial);
    for (double lambda : {0.1, 1.0, 10.0}) {
      const Matrix h = oracle::dense_precision(c.la.factor, c.lg.factor, lambda);
      CHECK(logdet_precision(c, lambda) ==
            doctest::Approx(oracle::logdet(h)).epsilon(1e-10));
    }
  }
}

TEST_CASE("logdet_precision handles zero factors and rejects bad lambda") {
  ExpertCurvature c;
  c.la = LowRankFactor::zero(5, 2);
  c.lg = LowRankFactor::zero(4, 2);
  CHECK(logdet_precision(c, 2.0) == doctest::Approx(20.0 * std::log(2.0)));
  CHECK_THROWS_AS(logdet_precision(c, 0.0), std::domain_error);
}

TEST_CASE("evidence signs flip only the logdet term") {
  const LaplacePosterior post = zero_curvature_posterior(5);
  const Dataset data = tiny_data(post.model.config, 8, 3);
  const EvidenceReport sig = evidence(post, data, EvidenceSign::kSigma);
  const EvidenceReport hrep = evidence(post, data, EvidenceSign::kH);
  CHECK(sig.map_fit == hrep.map_fit);
  CHECK(sig.prior_term == hrep.prior_term);
  CHECK(sig.logdet_term == doctest::Approx(-hrep.logdet_term));
  CHECK(sig.logdet_h.size() == 4);
}

TEST_CASE("zero-curvature evidence optimum matches the closed form") {
  const LaplacePosterior post = zero_curvature_posterior(9);
  const Dataset data = tiny_data(post.model.config, 8, 4);

  double total_dims = 0.0, total_norm = 0.0;
  for (const ExpertId& id : post.treated) {
    const ExpertCurvature& c = post.curvature.experts.at(id);
    total_dims += static_cast<double>(c.d_in() * c.d_out());
    total_norm += post.map_weight(id).squaredNorm();
  }
  const double analytic = total_dims / total_norm;

  const LambdaTrajectory traj = optimize_lambda_evidence(post, data, 0.1, 300);
  CHECK(std::abs(traj.lambda - analytic) / analytic < 0.01);
  for (std::size_t i = 1; i < traj.evidence_values.size(); ++i)
    CHECK(traj.evidence_values[i] >= traj.evidence_values[i - 1]);
}

TEST_CASE("evidence ascent beats a log grid") {
  MoEConfig cfg;
  cfg.num_layers = 1;
  cfg.num_experts = 2;
  cfg.top_k = 1;
  cfg.d_model = 4;
  cfg.d_ff = 5;
  cfg.d_input = 3;
  cfg.seed = 12;
  const MoEModel model = MoEModel::init(cfg);
  CurvatureSet curv;
  for (int e = 0; e < 2; ++e) {
    ExpertCurvature c = random_curvature(cfg.d_ff, cfg.d_model, 2, 40 + e);
    c.id = {0, e};
    curv.experts.emplace(c.id, std::move(c));
  }
  const LaplacePosterior post = make_posterior(model, curv, 1.0, all_experts(curv));
  const Dataset data = tiny_data(cfg, 10, 6);

  const LambdaTrajectory traj = optimize_lambda_evidence(post, data, 0.1, 400);
  LaplacePosterior at = post;
  at.lambda = traj.lambda;
  const double opt_value = evidence(at, data, EvidenceSign::kH).total;
  for (int i = 0; i < 25; ++i) {
    at.lambda = std::pow(10.0, -3.0 + 6.0 * i / 24.0);
    CHECK(opt_value >= evidence(at, data, EvidenceSign::kH).total - 1e-6);
  }
}

TEST_CASE("zero learning rate leaves lambda unchanged") {
  const LaplacePosterior post = zero_curvature_posterior(2);
  const Dataset data = tiny_data(post.model.config, 4, 8);
  const LambdaTrajectory traj = optimize_lambda_evidence(post, data, 0.0, 10);
  CHECK(traj.lambda == post.lambda);
}

TEST_CASE("golden-section search finds the minimum of a smooth bowl") {
  // minimum at lambda = 3
  auto f = [](double lambda) { return std::pow(std::log(lambda) - std::log(3.0), 2); };
  const double found = optimize_lambda_validation(f, 1e-3, 1e3, 1e-4);
  CHECK(std::abs(std::log(found) - std::log(3.0)) < 1e-3);
  CHECK_THROWS(optimize_lambda_validation(f, -1.0, 1.0));
}

TEST_CASE("posterior validation") {
  LaplacePosterior post = zero_curvature_posterior(1);
  post.lambda = -1.0;
  CHECK_THROWS_AS(post.validate(), std::domain_error);
  post.lambda = 1.0;
  post.treated.insert({9, 9});
  CHECK_THROWS_AS(post.validate(), std::invalid_argument);
  CHECK_THROWS(evidence_sign_from_string("minus"));
}
