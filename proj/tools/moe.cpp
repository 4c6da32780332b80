// moe: train a small mixture-of-experts classifier, fit a structured Laplace
// posterior over the expert output layers, and evaluate calibration.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
// failure, 1 anything else.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bmoe/experiment.hpp"
#include "bmoe/repro.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

bmoe::ExperimentConfig build_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides,
                                    std::optional<std::uint64_t> seed) {
  nlohmann::json doc = bmoe::ExperimentConfig{}.to_json();
  if (!config_path.empty()) {
    doc = bmoe::ExperimentConfig::from_file(config_path).to_json();
  }
  for (const std::string& assignment : overrides) bmoe::apply_override(doc, assignment);
  bmoe::ExperimentConfig cfg = bmoe::ExperimentConfig::from_json(doc);
  if (seed) cfg = bmoe::config_for_seed(cfg, *seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-of-experts classifier with post-hoc Laplace uncertainty"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON config file; defaults apply if omitted");
  app.add_option("--out-dir", out_dir, "root directory for data/checkpoints/reports")
      ->capture_default_str();
  app.add_option("--set", overrides,
                 "config override as key.path=value, may be repeated");
  app.add_option("--seed", seed, "master seed; derives every stage seed from it");

  CLI::App* gen = app.add_subcommand("gen-data", "synthesize the configured dataset splits");
  CLI::App* train = app.add_subcommand("train", "train the model to the MAP point");
  CLI::App* fit = app.add_subcommand("fit-laplace", "fit the Laplace posterior");
  CLI::App* evaluate = app.add_subcommand("evaluate", "predict and score all splits");
  CLI::App* ablate = app.add_subcommand("ablate", "layer-quarter treatment ablation");
  CLI::App* repro = app.add_subcommand("repro-all", "full multi-seed reproduction run");

  std::optional<double> lambda_fixed;
  bool lpo = false;
  std::string treat;
  fit->add_option("--lambda-fixed", lambda_fixed, "skip tuning, use this prior precision");
  fit->add_flag("--lpo", lpo, "tune lambda on validation NLL instead of the evidence");
  fit->add_option("--treat", treat, "'all' or 'none': which experts get a posterior");

  bool include_control = false;
  ablate->add_flag("--include-control", include_control,
                   "also report the all-treated control row");

  std::vector<std::uint64_t> repro_seeds;
  repro->add_option("--seeds", repro_seeds, "seed list, default 0..9");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    bmoe::ExperimentConfig cfg = build_config(config_path, overrides, seed);
    if (lpo) cfg.laplace.lpo = true;
    if (!treat.empty()) cfg.laplace.treat = treat;

    if (repro->parsed()) {
      const auto seeds = repro_seeds.empty() ? bmoe::default_repro_seeds() : repro_seeds;
      bmoe::run_repro_all(cfg, out_dir, seeds);
      std::cout << "repro-all: " << seeds.size() << " seeds, aggregate tables under "
                << out_dir << "/aggregate\n";
      return 0;
    }

    bmoe::ExperimentIo io(cfg, out_dir);
    if (gen->parsed()) {
      bmoe::run_gen_data(io);
      std::cout << "gen-data: wrote splits under " << out_dir << "\n";
    } else if (train->parsed()) {
      const bmoe::TrainResult r = bmoe::run_train(io);
      std::cout << "train: best val loss " << r.best_val_loss
                << (r.diverged ? " (diverged, best checkpoint kept)" : "") << "\n";
    } else if (fit->parsed()) {
      const bmoe::FitResult r = bmoe::run_fit_laplace(io, lambda_fixed);
      std::cout << "fit-laplace: lambda " << r.posterior.lambda << ", evidence "
                << r.final_evidence.total << "\n";
    } else if (evaluate->parsed()) {
      const bmoe::EvaluateResult r = bmoe::run_evaluate(io);
      for (const auto& [split, by_method] : r.reports)
        for (const auto& [method, rep] : by_method)
          std::cout << split << " " << method << ": acc " << rep.accuracy << " ece "
                    << rep.ece << " nll " << rep.nll << "\n";
    } else if (ablate->parsed()) {
      const bmoe::AblateResult r = bmoe::run_ablate(io, include_control);
      for (const auto& [split, rows] : r.rows)
        for (const bmoe::AblationRow& row : rows)
          std::cout << split << " " << row.excluded << ": ece " << row.report.ece
                    << " nll " << row.report.nll << "\n";
    }
    return 0;
  } catch (const bmoe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bmoe::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const bmoe::DecompositionError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const bmoe::DivergenceError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
