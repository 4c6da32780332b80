#include "bmoe/config.hpp"

#include <fstream>
#include <sstream>

namespace bmoe {

using nlohmann::json;

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void get_if_str(const json& j, const char* key, std::string& out) {
  if (j.contains(key)) out = j.at(key).get<std::string>();
}

json model_to_json(const MoEConfig& m) {
  return {{"num_layers", m.num_layers}, {"num_experts", m.num_experts},
          {"top_k", m.top_k},           {"d_model", m.d_model},
          {"d_ff", m.d_ff},             {"d_input", m.d_input},
          {"num_classes", m.num_classes},
          {"activation", to_string(m.activation)},
          {"residual", m.residual},     {"seed", m.seed}};
}

MoEConfig model_from_json(const json& j) {
  MoEConfig m;
  get_if(j, "num_layers", m.num_layers);
  get_if(j, "num_experts", m.num_experts);
  get_if(j, "top_k", m.top_k);
  get_if(j, "d_model", m.d_model);
  get_if(j, "d_ff", m.d_ff);
  get_if(j, "d_input", m.d_input);
  get_if(j, "num_classes", m.num_classes);
  if (j.contains("activation"))
    m.activation = activation_from_string(j.at("activation").get<std::string>());
  get_if(j, "residual", m.residual);
  get_if(j, "seed", m.seed);
  return m;
}

json train_to_json(const TrainConfig& t) {
  json freeze = json::array();
  for (ParamGroup g : t.frozen) {
    switch (g) {
      case ParamGroup::kEncoder: freeze.push_back("encoder"); break;
      case ParamGroup::kGate: freeze.push_back("gate"); break;
      case ParamGroup::kW1: freeze.push_back("w1"); break;
      case ParamGroup::kW2: freeze.push_back("w2"); break;
      case ParamGroup::kHead: freeze.push_back("head"); break;
    }
  }
  return {{"steps", t.steps},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"weight_decay_lambda", t.weight_decay_lambda},
          {"betas", t.betas},
          {"grad_clip", t.grad_clip},
          {"schedule", to_string(t.schedule)},
          {"seed", t.seed},
          {"freeze", freeze},
          {"eval_interval", t.eval_interval}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  get_if(j, "steps", t.steps);
  get_if(j, "batch_size", t.batch_size);
  get_if(j, "lr", t.lr);
  get_if(j, "weight_decay_lambda", t.weight_decay_lambda);
  get_if(j, "betas", t.betas);
  get_if(j, "grad_clip", t.grad_clip);
  if (j.contains("schedule")) t.schedule = schedule_from_string(j.at("schedule").get<std::string>());
  get_if(j, "seed", t.seed);
  get_if(j, "eval_interval", t.eval_interval);
  if (j.contains("freeze")) {
    for (const auto& name : j.at("freeze")) {
      const std::string s = name.get<std::string>();
      if (s == "encoder") t.frozen.insert(ParamGroup::kEncoder);
      else if (s == "gate") t.frozen.insert(ParamGroup::kGate);
      else if (s == "w1") t.frozen.insert(ParamGroup::kW1);
      else if (s == "w2") t.frozen.insert(ParamGroup::kW2);
      else if (s == "head") t.frozen.insert(ParamGroup::kHead);
      else throw ConfigError("train.freeze: unknown group '" + s + "'");
    }
  }
  return t;
}

json sketch_to_json(const SketchConfig& s) {
  return {{"target_rank", s.target_rank}, {"oversampling", s.oversampling}, {"seed", s.seed}};
}

SketchConfig sketch_from_json(const json& j) {
  SketchConfig s;
  get_if(j, "target_rank", s.target_rank);
  get_if(j, "oversampling", s.oversampling);
  get_if(j, "seed", s.seed);
  return s;
}

json synthetic_to_json(const SyntheticSpec& s) {
  return {{"generator", s.generator}, {"num_classes", s.num_classes}, {"dim", s.dim},
          {"noise", s.noise},         {"shift", s.shift},             {"seed", s.seed},
          {"train_n", s.train_n},     {"val_n", s.val_n},             {"test_n", s.test_n},
          {"ood_n", s.ood_n}};
}

SyntheticSpec synthetic_from_json(const json& j) {
  SyntheticSpec s;
  get_if_str(j, "generator", s.generator);
  get_if(j, "num_classes", s.num_classes);
  get_if(j, "dim", s.dim);
  get_if(j, "noise", s.noise);
  get_if(j, "shift", s.shift);
  get_if(j, "seed", s.seed);
  get_if(j, "train_n", s.train_n);
  get_if(j, "val_n", s.val_n);
  get_if(j, "test_n", s.test_n);
  get_if(j, "ood_n", s.ood_n);
  return s;
}

}  // namespace

json ExperimentConfig::to_json() const {
  json j;
  j["model"] = model_to_json(model);
  j["train"] = train_to_json(train);
  j["sketch"] = sketch_to_json(sketch);
  j["laplace"] = {{"lambda0", laplace.lambda0},
                  {"fisher_mode", to_string(laplace.fisher_mode)},
                  {"fisher_normalization", to_string(laplace.fisher_normalization)},
                  {"evidence_sign", to_string(laplace.evidence_sign)},
                  {"lpo", laplace.lpo},
                  {"eta", laplace.eta},
                  {"opt_steps", laplace.opt_steps},
                  {"treat", laplace.treat}};
  j["mc"] = {{"samples", mc.samples}, {"seed", mc.seed}};
  j["eval"] = {{"num_bins", eval.num_bins}};
  j["paths"] = {{"data", paths.data}, {"checkpoints", paths.checkpoints},
                {"reports", paths.reports}};
  j["synthetic"] = synthetic_to_json(synthetic);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (j.contains("sketch")) c.sketch = sketch_from_json(j.at("sketch"));
  if (j.contains("laplace")) {
    const json& l = j.at("laplace");
    get_if(l, "lambda0", c.laplace.lambda0);
    if (l.contains("fisher_mode"))
      c.laplace.fisher_mode = fisher_mode_from_string(l.at("fisher_mode").get<std::string>());
    if (l.contains("fisher_normalization"))
      c.laplace.fisher_normalization =
          fisher_normalization_from_string(l.at("fisher_normalization").get<std::string>());
    if (l.contains("evidence_sign"))
      c.laplace.evidence_sign = evidence_sign_from_string(l.at("evidence_sign").get<std::string>());
    get_if(l, "lpo", c.laplace.lpo);
    get_if(l, "eta", c.laplace.eta);
    get_if(l, "opt_steps", c.laplace.opt_steps);
    get_if_str(l, "treat", c.laplace.treat);
  }
  if (j.contains("mc")) {
    get_if(j.at("mc"), "samples", c.mc.samples);
    get_if(j.at("mc"), "seed", c.mc.seed);
  }
  if (j.contains("eval")) get_if(j.at("eval"), "num_bins", c.eval.num_bins);
  if (j.contains("paths")) {
    get_if_str(j.at("paths"), "data", c.paths.data);
    get_if_str(j.at("paths"), "checkpoints", c.paths.checkpoints);
    get_if_str(j.at("paths"), "reports", c.paths.reports);
  }
  if (j.contains("synthetic")) c.synthetic = synthetic_from_json(j.at("synthetic"));
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return from_json(j);
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json().dump()); }

std::string ExperimentConfig::train_hash() const {
  const json full = to_json();
  json j;
  for (const char* key : {"synthetic", "model", "train"}) j[key] = full.at(key);
  return fnv1a_hex(j.dump());
}

std::string ExperimentConfig::posterior_hash() const {
  const json full = to_json();
  json j;
  for (const char* key : {"synthetic", "model", "train", "sketch", "laplace"})
    j[key] = full.at(key);
  return fnv1a_hex(j.dump());
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must be key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &doc;
  std::istringstream parts(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(parts, key, '.')) keys.push_back(key);
  if (keys.empty()) throw ConfigError("override has empty key path: " + assignment);
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) node = &(*node)[keys[i]];

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;  // bare string
  }
  (*node)[keys.back()] = parsed;
}

}  // namespace bmoe
