#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bmoe/experiment.hpp"

namespace bmoe {

// The full pipeline (gen-data, train, fit-laplace, evaluate, ablate) for one
// seed, writing under <out_dir>/seed_<s>/. All stage seeds are derived from
// the run seed so a single integer pins the whole run.
struct SeedRun {
  std::uint64_t seed = 0;
  EvaluateResult eval;
  AblateResult ablate;
};

SeedRun run_seed(const ExperimentConfig& base, std::uint64_t seed,
                 const std::string& out_dir);

// Derives the per-stage seeds for one run from the base config.
ExperimentConfig config_for_seed(const ExperimentConfig& base, std::uint64_t seed);

struct ReproResult {
  std::vector<SeedRun> runs;
};

std::vector<std::uint64_t> default_repro_seeds();  // 0..9

// Runs every seed and writes aggregate tables (mean and standard deviation of
// accuracy, ECE and NLL per split and method, plus the quarter-ablation
// table) under <out_dir>/aggregate/. Output bytes depend only on the config
// and the seed list.
ReproResult run_repro_all(const ExperimentConfig& base, const std::string& out_dir,
                          const std::vector<std::uint64_t>& seeds = default_repro_seeds());

}  // namespace bmoe
