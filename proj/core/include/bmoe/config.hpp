#pragma once

#include <string>

#include <json.hpp>

#include "bmoe/curvature.hpp"
#include "bmoe/data.hpp"
#include "bmoe/laplace.hpp"
#include "bmoe/model.hpp"
#include "bmoe/predictive.hpp"
#include "bmoe/train.hpp"

namespace bmoe {

struct LaplaceOptions {
  double lambda0 = 1.0;
  FisherMode fisher_mode = FisherMode::kSampled;
  FisherNormalization fisher_normalization = FisherNormalization::kMean;
  // Objective sign used by the evidence optimizer; kH is the convention whose
  // zero-curvature optimum is interior.
  EvidenceSign evidence_sign = EvidenceSign::kH;
  bool lpo = false;  // tune lambda on validation NLL instead of evidence
  double eta = 0.05;
  int opt_steps = 200;
  std::string treat = "all";  // "all" | "none"
};

struct EvalOptions {
  int num_bins = 10;
};

struct PathOptions {
  std::string data = "data";
  std::string checkpoints = "checkpoints";
  std::string reports = "reports";
};

struct ExperimentConfig {
  MoEConfig model;
  TrainConfig train;
  SketchConfig sketch;
  LaplaceOptions laplace;
  McConfig mc;
  EvalOptions eval;
  PathOptions paths;
  SyntheticSpec synthetic;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::string& path);
  nlohmann::json to_json() const;

  // FNV-1a over the canonical JSON dump; ties artifacts together.
  std::string hash() const;
  // Subset hashes so artifacts only pin the config sections that shaped
  // them: a checkpoint survives laplace/mc tweaks, a posterior survives
  // mc/eval tweaks.
  std::string train_hash() const;      // synthetic + model + train
  std::string posterior_hash() const;  // train_hash sections + sketch + laplace
};

// Applies "a.b.c=value" to a JSON document; value parsed as JSON when
// possible, else taken as a string. Throws ConfigError on unknown paths.
void apply_override(nlohmann::json& doc, const std::string& assignment);

std::string fnv1a_hex(const std::string& data);

}  // namespace bmoe
