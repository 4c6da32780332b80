#include <benchmark/benchmark.h>

#include "bmoe/curvature.hpp"
#include "bmoe/laplace.hpp"
#include "bmoe/linalg.hpp"
#include "bmoe/model.hpp"
#include "bmoe/predictive.hpp"
#include "bmoe/rng.hpp"

namespace {

bmoe::ExpertCurvature make_curvature(int d_in, int d_out, int rank, std::uint64_t seed) {
  bmoe::Rng rng(seed);
  bmoe::ExpertCurvature c;
  c.id = {0, 0};
  c.la = bmoe::LowRankFactor(rng.gaussian_matrix(d_in, rank));
  c.lg = bmoe::LowRankFactor(rng.gaussian_matrix(d_out, rank));
  c.token_count = 1024;
  return c;
}

void BM_LogdetPrecision(benchmark::State& state) {
  const auto c = make_curvature(static_cast<int>(state.range(0)), 16,
                                static_cast<int>(state.range(1)), 7);
  for (auto _ : state) benchmark::DoNotOptimize(bmoe::logdet_precision(c, 0.5));
}
BENCHMARK(BM_LogdetPrecision)->Args({32, 10})->Args({128, 10})->Args({128, 32});

void BM_SketchPush(benchmark::State& state) {
  const Eigen::Index dim = state.range(0);
  bmoe::SketchConfig cfg;
  cfg.seed = 11;
  bmoe::Rng rng(3);
  std::vector<bmoe::Vector> cols;
  for (int i = 0; i < 64; ++i) cols.push_back(rng.normal_vector(dim));
  for (auto _ : state) {
    bmoe::RsvdAccumulator acc(dim, cfg);
    for (const auto& c : cols) acc.push(c);
    benchmark::DoNotOptimize(acc.factor());
  }
}
BENCHMARK(BM_SketchPush)->Arg(32)->Arg(128)->Arg(512);

void BM_Forward(benchmark::State& state) {
  bmoe::MoEConfig cfg;
  cfg.num_layers = static_cast<int>(state.range(0));
  const auto model = bmoe::MoEModel::init(cfg);
  bmoe::Rng rng(5);
  const bmoe::Vector x = rng.normal_vector(cfg.d_input);
  for (auto _ : state) benchmark::DoNotOptimize(bmoe::forward(model, x));
}
BENCHMARK(BM_Forward)->Arg(2)->Arg(4)->Arg(8);

void BM_PredictiveCovariance(benchmark::State& state) {
  bmoe::MoEConfig cfg;
  const auto model = bmoe::MoEModel::init(cfg);
  bmoe::CurvatureSet curv;
  curv.sketch.seed = 9;
  for (int l = 0; l < cfg.num_layers; ++l)
    for (int e = 0; e < cfg.num_experts; ++e) {
      auto c = make_curvature(cfg.d_ff, cfg.d_model, curv.sketch.target_rank,
                              bmoe::mix_seed(13, l * 100 + e));
      c.id = {l, e};
      curv.experts.emplace(c.id, std::move(c));
    }
  const auto post =
      bmoe::make_posterior(model, curv, 1.0, bmoe::all_experts(curv));
  const bmoe::PosteriorPredictor predictor(post);
  bmoe::Rng rng(5);
  const bmoe::Vector x = rng.normal_vector(cfg.d_input);
  for (auto _ : state) benchmark::DoNotOptimize(predictor.distribution(x));
}
BENCHMARK(BM_PredictiveCovariance);

}  // namespace

BENCHMARK_MAIN();
