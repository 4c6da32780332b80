#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "bmoe/data.hpp"
#include "bmoe/predictive.hpp"

namespace bmoe {

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::int64_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct CalibrationReport {
  double accuracy = 0.0;
  double nll = 0.0;
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
  int num_bins = 10;
  std::string method;   // "map" | "bayes"
  std::string dataset;  // split tag
  std::int64_t num_examples = 0;
};

// Mean of -log p(true label), probabilities floored at 1e-12.
double nll(const std::vector<Vector>& probs, const std::vector<int>& labels);

struct EceResult {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
};

// Equal-width right-closed bins on (0,1]; confidence is the max class
// probability; empty bins contribute 0.
EceResult ece(const std::vector<Vector>& probs, const std::vector<int>& labels, int num_bins);

struct PredictionRow {
  int example_id = 0;
  Vector mean_logits;
  Vector probs_map;
  Vector probs_bayes;
  int label = 0;
};

void save_prediction_dump(const std::vector<PredictionRow>& rows, const std::string& path);

struct DumpLoadResult {
  std::vector<PredictionRow> rows;
  std::vector<std::string> row_errors;  // malformed rows, evaluation continues
};
DumpLoadResult load_prediction_dump(const std::string& path);

// Accuracy (argmax, ties to lowest class id), NLL, ECE and the bin table for
// one method's probabilities out of a dump.
CalibrationReport evaluate_method(const std::vector<PredictionRow>& rows,
                                  const std::string& method, int num_bins,
                                  const std::string& dataset_tag);

struct AblationPlan {
  int num_layers = 0;
  // Half-open layer ranges [begin, end) for Q1..Q4, computed at boundaries
  // floor(L/4), floor(L/2), floor(3L/4).
  std::array<std::pair<int, int>, 4> quarters;

  static AblationPlan for_layers(int num_layers);
};

struct AblationRow {
  std::string excluded;  // "Q1".."Q4" or "control"
  CalibrationReport report;
};

// For each quarter, treats all experts except those in the excluded layers
// and runs the full predictive + evaluation pipeline. Reports in Q1..Q4
// order; optional all-treated control row first.
std::vector<AblationRow> run_ablation(const LaplacePosterior& post, const Dataset& data,
                                      const AblationPlan& plan, const McConfig& mc, int num_bins,
                                      bool include_control = false);

}  // namespace bmoe
