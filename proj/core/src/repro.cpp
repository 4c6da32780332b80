#include "bmoe/repro.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "bmoe/rng.hpp"

namespace bmoe {

namespace fs = std::filesystem;

std::vector<std::uint64_t> default_repro_seeds() {
  std::vector<std::uint64_t> seeds(10);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  return seeds;
}

ExperimentConfig config_for_seed(const ExperimentConfig& base, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.synthetic.seed = mix_seed(seed, 1);
  cfg.model.seed = mix_seed(seed, 2);
  cfg.train.seed = mix_seed(seed, 3);
  cfg.sketch.seed = mix_seed(seed, 4);
  cfg.mc.seed = mix_seed(seed, 5);
  return cfg;
}

SeedRun run_seed(const ExperimentConfig& base, std::uint64_t seed,
                 const std::string& out_dir) {
  const ExperimentConfig cfg = config_for_seed(base, seed);
  const std::string seed_dir =
      (fs::path(out_dir) / ("seed_" + std::to_string(seed))).string();
  ExperimentIo io(cfg, seed_dir);

  SeedRun run;
  run.seed = seed;
  run_gen_data(io);
  run_train(io);
  run_fit_laplace(io);
  run.eval = run_evaluate(io);
  run.ablate = run_ablate(io, /*include_control=*/true);
  return run;
}

namespace {

struct Stats {
  std::vector<double> values;
  void add(double v) { values.push_back(v); }
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
  double stddev() const {
    if (values.size() < 2) return 0.0;
    const double m = mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

struct MetricStats {
  Stats accuracy, ece, nll;
  void add(const CalibrationReport& rep) {
    accuracy.add(rep.accuracy);
    ece.add(rep.ece);
    nll.add(rep.nll);
  }
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  return out;
}

}  // namespace

ReproResult run_repro_all(const ExperimentConfig& base, const std::string& out_dir,
                          const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("repro-all needs at least one seed");
  ReproResult result;
  result.runs.reserve(seeds.size());
  for (std::uint64_t seed : seeds) result.runs.push_back(run_seed(base, seed, out_dir));

  // split/method -> stats over seeds
  std::map<std::pair<std::string, std::string>, MetricStats> metrics;
  // split/excluded -> stats over seeds
  std::map<std::pair<std::string, std::string>, MetricStats> ablation;
  for (const SeedRun& run : result.runs) {
    for (const auto& [split, by_method] : run.eval.reports)
      for (const auto& [method, rep] : by_method) metrics[{split, method}].add(rep);
    for (const auto& [split, rows] : run.ablate.rows)
      for (const AblationRow& row : rows) ablation[{split, row.excluded}].add(row.report);
  }

  const fs::path agg = fs::path(out_dir) / "aggregate";
  std::error_code ec;
  fs::create_directories(agg, ec);
  if (ec) throw IoError("cannot create directory " + agg.string() + ": " + ec.message());

  {
    auto out = open_out((agg / "metrics.csv").string());
    out << "split,method,accuracy_mean,accuracy_std,ece_mean,ece_std,nll_mean,nll_std\n";
    for (const auto& [key, s] : metrics)
      out << key.first << "," << key.second << "," << s.accuracy.mean() << ","
          << s.accuracy.stddev() << "," << s.ece.mean() << "," << s.ece.stddev() << ","
          << s.nll.mean() << "," << s.nll.stddev() << "\n";
  }
  {
    auto out = open_out((agg / "ablation.csv").string());
    out << "split,excluded,accuracy_mean,accuracy_std,ece_mean,ece_std,nll_mean,nll_std\n";
    for (const auto& [key, s] : ablation)
      out << key.first << "," << key.second << "," << s.accuracy.mean() << ","
          << s.accuracy.stddev() << "," << s.ece.mean() << "," << s.ece.stddev() << ","
          << s.nll.mean() << "," << s.nll.stddev() << "\n";
  }
  {
    auto out = open_out((agg / "tables.md").string());
    out.precision(4);
    out << "# Aggregate metrics over " << seeds.size() << " seeds\n\n";
    out << "| split | method | accuracy | ECE | NLL |\n";
    out << "|---|---|---|---|---|\n";
    for (const auto& [key, s] : metrics)
      out << "| " << key.first << " | " << key.second << " | " << s.accuracy.mean()
          << " +- " << s.accuracy.stddev() << " | " << s.ece.mean() << " +- "
          << s.ece.stddev() << " | " << s.nll.mean() << " +- " << s.nll.stddev()
          << " |\n";
    out << "\n# Layer-quarter ablation (Bayes)\n\n";
    out << "| split | excluded | accuracy | ECE | NLL |\n";
    out << "|---|---|---|---|---|\n";
    for (const auto& [key, s] : ablation)
      out << "| " << key.first << " | " << key.second << " | " << s.accuracy.mean()
          << " +- " << s.accuracy.stddev() << " | " << s.ece.mean() << " +- "
          << s.ece.stddev() << " | " << s.nll.mean() << " +- " << s.nll.stddev()
          << " |\n";
  }
  return result;
}

}  // namespace bmoe
