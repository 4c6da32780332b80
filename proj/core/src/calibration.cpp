#include "bmoe/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace bmoe {

using nlohmann::json;

double nll(const std::vector<Vector>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw ShapeError("nll: probs/labels length mismatch");
  if (probs.empty()) throw ShapeError("nll: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    total -= std::log(std::max(probs[i][labels[i]], 1e-12));
  return total / static_cast<double>(probs.size());
}

namespace {

int argmax_lowest_tie(const Vector& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

EceResult ece(const std::vector<Vector>& probs, const std::vector<int>& labels, int num_bins) {
  if (num_bins < 1) throw std::invalid_argument("ece: num_bins must be >= 1");
  if (probs.size() != labels.size()) throw ShapeError("ece: probs/labels length mismatch");
  EceResult out;
  out.bins.resize(num_bins);
  for (int m = 0; m < num_bins; ++m) {
    out.bins[m].lo = static_cast<double>(m) / num_bins;
    out.bins[m].hi = static_cast<double>(m + 1) / num_bins;
  }
  std::vector<double> conf_sum(num_bins, 0.0);
  std::vector<std::int64_t> correct(num_bins, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int pred = argmax_lowest_tie(probs[i]);
    const double conf = probs[i][pred];
    // Right-closed bins on (0,1]: bin m covers (m/M, (m+1)/M].
    int m = static_cast<int>(std::ceil(conf * num_bins)) - 1;
    m = std::clamp(m, 0, num_bins - 1);
    out.bins[m].count += 1;
    conf_sum[m] += conf;
    if (pred == labels[i]) correct[m] += 1;
  }
  const double n = static_cast<double>(probs.size());
  for (int m = 0; m < num_bins; ++m) {
    if (out.bins[m].count == 0) continue;
    out.bins[m].mean_confidence = conf_sum[m] / out.bins[m].count;
    out.bins[m].accuracy = static_cast<double>(correct[m]) / out.bins[m].count;
    out.ece += (out.bins[m].count / n) *
               std::abs(out.bins[m].accuracy - out.bins[m].mean_confidence);
  }
  return out;
}

void save_prediction_dump(const std::vector<PredictionRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write prediction dump: " + path);
  out.precision(17);
  auto to_vec = [](const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  for (const PredictionRow& r : rows) {
    json row;
    row["example_id"] = r.example_id;
    row["mean_logits"] = to_vec(r.mean_logits);
    row["probs_map"] = to_vec(r.probs_map);
    row["probs_bayes"] = to_vec(r.probs_bayes);
    row["label"] = r.label;
    out << row.dump() << "\n";
  }
}

DumpLoadResult load_prediction_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prediction dump: " + path);
  DumpLoadResult out;
  std::string line;
  std::size_t lineno = 0;
  auto to_vector = [](const json& arr) {
    Vector v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) v[i] = arr[i].get<double>();
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json row = json::parse(line);
      PredictionRow r;
      r.example_id = row.at("example_id").get<int>();
      r.mean_logits = to_vector(row.at("mean_logits"));
      r.probs_map = to_vector(row.at("probs_map"));
      r.probs_bayes = to_vector(row.at("probs_bayes"));
      r.label = row.at("label").get<int>();
      out.rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      out.row_errors.push_back(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

CalibrationReport evaluate_method(const std::vector<PredictionRow>& rows,
                                  const std::string& method, int num_bins,
                                  const std::string& dataset_tag) {
  if (rows.empty()) throw std::invalid_argument("evaluate_method: empty dump");
  std::vector<Vector> probs;
  std::vector<int> labels;
  probs.reserve(rows.size());
  for (const PredictionRow& r : rows) {
    probs.push_back(method == "map" ? r.probs_map : r.probs_bayes);
    labels.push_back(r.label);
  }
  CalibrationReport rep;
  rep.method = method;
  rep.dataset = dataset_tag;
  rep.num_bins = num_bins;
  rep.num_examples = static_cast<std::int64_t>(rows.size());
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (argmax_lowest_tie(probs[i]) == labels[i]) ++correct;
  rep.accuracy = static_cast<double>(correct) / rows.size();
  rep.nll = nll(probs, labels);
  EceResult er = ece(probs, labels, num_bins);
  rep.ece = er.ece;
  rep.bins = std::move(er.bins);
  return rep;
}

AblationPlan AblationPlan::for_layers(int num_layers) {
  if (num_layers < 1) throw std::invalid_argument("AblationPlan: num_layers must be >= 1");
  AblationPlan plan;
  plan.num_layers = num_layers;
  const int b1 = num_layers / 4;
  const int b2 = num_layers / 2;
  const int b3 = 3 * num_layers / 4;
  plan.quarters = {std::pair{0, b1}, {b1, b2}, {b2, b3}, {b3, num_layers}};
  return plan;
}

std::vector<AblationRow> run_ablation(const LaplacePosterior& post, const Dataset& data,
                                      const AblationPlan& plan, const McConfig& mc, int num_bins,
                                      bool include_control) {
  auto evaluate_with = [&](const std::set<ExpertId>& treated, const std::string& tag) {
    LaplacePosterior sub = post;
    sub.treated = treated;
    PosteriorPredictor predictor(sub);
    std::vector<PredictionRow> rows;
    rows.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto p = predictor.predict(data.features[i], mc);
      rows.push_back({static_cast<int>(i), p.mean_logits, p.probs_map, p.probs_bayes,
                      data.labels[i]});
    }
    AblationRow row;
    row.excluded = tag;
    row.report = evaluate_method(rows, "bayes", num_bins, data.split);
    return row;
  };

  std::vector<AblationRow> out;
  if (include_control) out.push_back(evaluate_with(post.treated, "control"));
  for (int q = 0; q < 4; ++q) {
    const auto [begin, end] = plan.quarters[q];
    std::set<ExpertId> treated;
    for (const ExpertId& id : post.treated)
      if (id.layer < begin || id.layer >= end) treated.insert(id);
    out.push_back(evaluate_with(treated, "Q" + std::to_string(q + 1)));
  }
  return out;
}

}  // namespace bmoe
