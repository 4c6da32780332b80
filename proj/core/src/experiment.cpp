#include "bmoe/experiment.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bmoe/curvature.hpp"
#include "bmoe/predictive.hpp"

namespace bmoe {

namespace fs = std::filesystem;
using nlohmann::json;

int num_threads_from_env() {
  const char* raw = std::getenv("MOE_NUM_THREADS");
  if (raw == nullptr) return 1;
  try {
    return std::max(1, std::stoi(raw));
  } catch (const std::exception&) {
    throw ConfigError(std::string("MOE_NUM_THREADS is not an integer: ") + raw);
  }
}

ExperimentIo::ExperimentIo(ExperimentConfig cfg, std::string out_dir)
    : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)), hash_(cfg_.hash()) {
  cfg_.model.validate();
  cfg_.train.validate();
  cfg_.synthetic.validate();
}

std::string ExperimentIo::ensure_dir(const std::string& sub) const {
  const fs::path p = fs::path(out_dir_) / sub;
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
  return p.string();
}

std::string ExperimentIo::data_path(const std::string& split) const {
  return (fs::path(ensure_dir(cfg_.paths.data)) / (split + ".jsonl")).string();
}

std::string ExperimentIo::checkpoint_base() const {
  return (fs::path(ensure_dir(cfg_.paths.checkpoints)) / "model").string();
}

std::string ExperimentIo::posterior_base() const {
  return (fs::path(ensure_dir(cfg_.paths.checkpoints)) / "posterior").string();
}

std::string ExperimentIo::report_path(const std::string& file) const {
  return (fs::path(ensure_dir(cfg_.paths.reports)) / file).string();
}

Dataset ExperimentIo::load_split(const std::string& split) const {
  return load_jsonl(data_path(split), cfg_.model.d_input, split);
}

bool ExperimentIo::split_exists(const std::string& split) const {
  return fs::exists(fs::path(out_dir_) / cfg_.paths.data / (split + ".jsonl"));
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  return out;
}

void check_hash(const std::string& artifact, const std::string& found,
                const std::string& expected) {
  if (found != expected)
    throw ConfigError(artifact + " was produced under config hash " + found +
                      " but the current config hashes to " + expected);
}

void write_json_file(const json& j, const std::string& path) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

}  // namespace

void run_gen_data(const ExperimentIo& io) {
  const SyntheticSpec& spec = io.config().synthetic;
  GeneratedData data = generate(spec);
  save_jsonl(data.train, io.data_path("train"));
  save_jsonl(data.val, io.data_path("val"));
  save_jsonl(data.test, io.data_path("test"));
  json splits = {{"train", data.train.size()}, {"val", data.val.size()},
                 {"test", data.test.size()}};
  if (data.ood) {
    save_jsonl(*data.ood, io.data_path("ood"));
    splits["ood"] = data.ood->size();
  }
  write_json_file({{"config_hash", io.config_hash()},
                   {"generator", spec.generator},
                   {"splits", splits}},
                  (fs::path(io.data_path("train")).parent_path() / "manifest.json").string());
}

TrainResult run_train(const ExperimentIo& io) {
  const Dataset train_data = io.load_split("train");
  const Dataset val_data = io.load_split("val");
  const MoEModel init = MoEModel::init(io.config().model);
  TrainResult result = train(init, train_data, val_data, io.config().train);
  save_checkpoint(result.model, io.checkpoint_base(), io.train_hash());
  write_loss_curve_csv(result.curve, io.report_path("loss_curve.csv"));
  return result;
}

FitResult run_fit_laplace(const ExperimentIo& io, std::optional<double> lambda_fixed) {
  const LoadedCheckpoint ckpt = load_checkpoint(io.checkpoint_base());
  check_hash("checkpoint", ckpt.config_hash, io.train_hash());
  const Dataset train_data = io.load_split("train");
  const LaplaceOptions& opt = io.config().laplace;

  CurvatureSet curvature =
      accumulate(ckpt.model, train_data, io.config().sketch, opt.fisher_mode,
                 opt.fisher_normalization, ckpt.config_hash, num_threads_from_env());

  std::set<ExpertId> treated;
  if (opt.treat == "all") treated = all_experts(curvature);
  else if (opt.treat != "none")
    throw ConfigError("laplace.treat must be 'all' or 'none', got '" + opt.treat + "'");

  FitResult out{make_posterior(ckpt.model, std::move(curvature), opt.lambda0,
                               std::move(treated)),
                {}, {}};

  if (lambda_fixed) {
    if (*lambda_fixed <= 0.0) throw ConfigError("--lambda-fixed must be positive");
    out.posterior.lambda = *lambda_fixed;
  } else if (opt.lpo) {
    const Dataset val_data = io.load_split("val");
    const McConfig mc = io.config().mc;
    auto val_nll = [&](double lambda) {
      LaplacePosterior cand = out.posterior;
      cand.lambda = lambda;
      PosteriorPredictor predictor(cand);
      std::vector<Vector> probs;
      probs.reserve(val_data.size());
      for (const Vector& x : val_data.features)
        probs.push_back(predictor.predict(x, mc).probs_bayes);
      return nll(probs, val_data.labels);
    };
    out.posterior.lambda = optimize_lambda_validation(val_nll);
  } else {
    out.trajectory = optimize_lambda_evidence(out.posterior, train_data, opt.eta,
                                              opt.opt_steps, opt.evidence_sign);
    out.posterior.lambda = out.trajectory.lambda;
  }

  out.posterior.validate();
  save_posterior(out.posterior, io.posterior_base(), io.posterior_hash());

  out.final_evidence = evidence(out.posterior, train_data);
  write_json_file({{"lambda", out.posterior.lambda},
                   {"evidence", out.final_evidence.total},
                   {"map_fit", out.final_evidence.map_fit},
                   {"logdet_term", out.final_evidence.logdet_term},
                   {"prior_term", out.final_evidence.prior_term},
                   {"num_treated", out.posterior.treated.size()},
                   {"config_hash", io.config_hash()}},
                  io.report_path("laplace_fit.json"));
  if (!out.trajectory.evidence_values.empty()) {
    auto csv = open_out(io.report_path("lambda_trajectory.csv"));
    csv << "step,objective\n";
    for (std::size_t i = 0; i < out.trajectory.evidence_values.size(); ++i)
      csv << i << "," << out.trajectory.evidence_values[i] << "\n";
  }
  return out;
}

void write_calibration_report_json(const CalibrationReport& rep, const std::string& path) {
  json bins = json::array();
  for (const ReliabilityBin& b : rep.bins)
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count},
                    {"mean_confidence", b.mean_confidence}, {"accuracy", b.accuracy}});
  write_json_file({{"method", rep.method}, {"dataset", rep.dataset},
                   {"num_examples", rep.num_examples}, {"accuracy", rep.accuracy},
                   {"nll", rep.nll}, {"ece", rep.ece}, {"num_bins", rep.num_bins},
                   {"bins", bins}},
                  path);
}

void write_reliability_csv(const CalibrationReport& rep, const std::string& path) {
  auto out = open_out(path);
  out << "bin_center,mean_confidence,accuracy,count\n";
  for (const ReliabilityBin& b : rep.bins)
    out << 0.5 * (b.lo + b.hi) << "," << b.mean_confidence << "," << b.accuracy << ","
        << b.count << "\n";
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  auto out = open_out(path);
  out << "excluded,accuracy,ece,nll\n";
  for (const AblationRow& r : rows)
    out << r.excluded << "," << r.report.accuracy << "," << r.report.ece << ","
        << r.report.nll << "\n";
}

EvaluateResult run_evaluate(const ExperimentIo& io) {
  const LoadedCheckpoint ckpt = load_checkpoint(io.checkpoint_base());
  check_hash("checkpoint", ckpt.config_hash, io.train_hash());
  const LoadedPosterior post = load_posterior(io.posterior_base(), ckpt.model);
  check_hash("posterior", post.config_hash, io.posterior_hash());

  PosteriorPredictor predictor(post.posterior);
  const McConfig mc = io.config().mc;
  const int num_bins = io.config().eval.num_bins;

  EvaluateResult result;
  json summary;
  summary["config_hash"] = io.config_hash();
  summary["lambda"] = post.posterior.lambda;
  for (const std::string split : {"val", "test", "ood"}) {
    if (!io.split_exists(split)) continue;
    const Dataset data = io.load_split(split);
    std::vector<PredictionRow> rows;
    rows.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto p = predictor.predict(data.features[i], mc);
      rows.push_back({static_cast<int>(i), p.mean_logits, p.probs_map, p.probs_bayes,
                      data.labels[i]});
    }
    save_prediction_dump(rows, io.report_path("predictions_" + split + ".jsonl"));
    for (const std::string method : {"map", "bayes"}) {
      CalibrationReport rep = evaluate_method(rows, method, num_bins, split);
      write_calibration_report_json(
          rep, io.report_path("calibration_" + split + "_" + method + ".json"));
      write_reliability_csv(
          rep, io.report_path("reliability_" + split + "_" + method + ".csv"));
      summary[split][method] = {{"accuracy", rep.accuracy}, {"ece", rep.ece},
                                {"nll", rep.nll}};
      result.reports[split][method] = std::move(rep);
    }
  }
  write_json_file(summary, io.report_path("summary.json"));
  return result;
}

AblateResult run_ablate(const ExperimentIo& io, bool include_control) {
  const LoadedCheckpoint ckpt = load_checkpoint(io.checkpoint_base());
  check_hash("checkpoint", ckpt.config_hash, io.train_hash());
  const LoadedPosterior post = load_posterior(io.posterior_base(), ckpt.model);
  check_hash("posterior", post.config_hash, io.posterior_hash());

  const AblationPlan plan = AblationPlan::for_layers(io.config().model.num_layers);
  AblateResult result;
  for (const std::string split : {"test", "ood"}) {
    if (!io.split_exists(split)) continue;
    const Dataset data = io.load_split(split);
    std::vector<AblationRow> rows = run_ablation(post.posterior, data, plan,
                                                 io.config().mc,
                                                 io.config().eval.num_bins,
                                                 include_control);
    write_ablation_csv(rows, io.report_path("ablation_" + split + ".csv"));
    result.rows[split] = std::move(rows);
  }
  return result;
}

}  // namespace bmoe
