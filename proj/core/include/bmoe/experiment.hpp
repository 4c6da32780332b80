#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bmoe/calibration.hpp"
#include "bmoe/checkpoint.hpp"
#include "bmoe/config.hpp"
#include "bmoe/train.hpp"

namespace bmoe {

// Number of worker threads for curvature accumulation, from MOE_NUM_THREADS.
// Defaults to 1; values below 1 are clamped to 1.
int num_threads_from_env();

// File layout under out_dir, one subdirectory per stage output as named in
// paths. Directories are created on demand.
class ExperimentIo {
 public:
  ExperimentIo(ExperimentConfig cfg, std::string out_dir);

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& out_dir() const { return out_dir_; }
  const std::string& config_hash() const { return hash_; }
  std::string train_hash() const { return cfg_.train_hash(); }
  std::string posterior_hash() const { return cfg_.posterior_hash(); }

  std::string data_path(const std::string& split) const;
  std::string checkpoint_base() const;  // <out>/<checkpoints>/model
  std::string posterior_base() const;   // <out>/<checkpoints>/posterior
  std::string report_path(const std::string& file) const;

  Dataset load_split(const std::string& split) const;
  bool split_exists(const std::string& split) const;

 private:
  std::string ensure_dir(const std::string& sub) const;

  ExperimentConfig cfg_;
  std::string out_dir_;
  std::string hash_;
};

// gen-data: synthesizes the configured splits and writes them as JSONL plus
// a small manifest recording the config hash and split sizes.
void run_gen_data(const ExperimentIo& io);

// train: reads train/val splits, trains from the seeded init and writes the
// model checkpoint and the loss curve CSV.
TrainResult run_train(const ExperimentIo& io);

struct FitResult {
  LaplacePosterior posterior;
  LambdaTrajectory trajectory;   // empty for fixed or validation-tuned lambda
  EvidenceReport final_evidence;
};

// fit-laplace: loads the checkpoint, accumulates curvature over the train
// split, picks lambda (fixed > validation search > evidence ascent, in that
// precedence) and writes the posterior artifact plus diagnostics.
FitResult run_fit_laplace(const ExperimentIo& io,
                          std::optional<double> lambda_fixed = std::nullopt);

struct EvaluateResult {
  // split -> method ("map"/"bayes") -> report
  std::map<std::string, std::map<std::string, CalibrationReport>> reports;
};

// evaluate: loads checkpoint and posterior, predicts every available eval
// split (val, test, ood), writes prediction dumps, per-method calibration
// reports and reliability-diagram CSVs.
EvaluateResult run_evaluate(const ExperimentIo& io);

struct AblateResult {
  std::map<std::string, std::vector<AblationRow>> rows;  // keyed by split
};

// ablate: re-runs the Bayes evaluation with each layer quarter's experts
// dropped from the treated set; optional all-treated control row.
AblateResult run_ablate(const ExperimentIo& io, bool include_control = false);

void write_calibration_report_json(const CalibrationReport& rep, const std::string& path);
// Columns: bin_center, mean_confidence, accuracy, count.
void write_reliability_csv(const CalibrationReport& rep, const std::string& path);
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

}  // namespace bmoe
