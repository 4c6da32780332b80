#include "bmoe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace bmoe {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian; big-endian hosts are unsupported");

namespace {

constexpr int kSchemaVersion = 1;

struct BlobWriter {
  std::ofstream out;
  json index = json::array();
  std::uint64_t offset = 0;

  explicit BlobWriter(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw IoError("cannot write blob: " + path);
  }

  void add(const std::string& name, const Matrix& m) {
    // Row-major serialization, 8-byte aligned by construction (f64 only).
    index.push_back({{"name", name},
                     {"shape", {m.rows(), m.cols()}},
                     {"dtype", "f64"},
                     {"offset", offset}});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double v = m(i, j);
        out.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(double);
  }
};

struct BlobReader {
  std::ifstream in;
  json index;

  BlobReader(const std::string& path, json idx) : in(path, std::ios::binary), index(std::move(idx)) {
    if (!in) throw IoError("cannot open blob: " + path);
  }

  Matrix read(const std::string& name) {
    for (const auto& entry : index) {
      if (entry.at("name").get<std::string>() != name) continue;
      const auto shape = entry.at("shape");
      const Eigen::Index rows = shape[0].get<Eigen::Index>();
      const Eigen::Index cols = shape[1].get<Eigen::Index>();
      in.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
          double v;
          in.read(reinterpret_cast<char*>(&v), sizeof(double));
          m(i, j) = v;
        }
      if (!in) throw IoError("blob truncated while reading tensor " + name);
      return m;
    }
    throw IoError("tensor not found in manifest: " + name);
  }
};

void write_manifest(const std::string& path, json manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << manifest.dump(2) << "\n";
}

json read_manifest(const std::string& path, const std::string& expected_kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  json manifest;
  in >> manifest;
  if (manifest.at("schema_version").get<int>() != kSchemaVersion)
    throw IoError("unsupported manifest schema version in " + path);
  if (manifest.at("kind").get<std::string>() != expected_kind)
    throw IoError("manifest kind mismatch in " + path + ": expected " + expected_kind);
  return manifest;
}

json model_config_json(const MoEConfig& cfg) {
  ExperimentConfig wrapper;
  wrapper.model = cfg;
  return wrapper.to_json().at("model");
}

MoEConfig model_config_from_json(const json& j) {
  json wrapper;
  wrapper["model"] = j;
  return ExperimentConfig::from_json(wrapper).model;
}

}  // namespace

void save_checkpoint(const MoEModel& model, const std::string& base_path,
                     const std::string& config_hash) {
  BlobWriter blob(base_path + ".bin");
  MoEModel& mut = const_cast<MoEModel&>(model);
  for (const ParamRef& ref : param_refs(mut)) blob.add(ref.name, *ref.tensor);

  json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["kind"] = "model";
  manifest["config_hash"] = config_hash;
  manifest["model_config"] = model_config_json(model.config);
  manifest["tensors"] = blob.index;
  manifest["meta"] = {{"created_by", "moe-cli"}};
  write_manifest(base_path + ".json", std::move(manifest));
}

LoadedCheckpoint load_checkpoint(const std::string& base_path) {
  const json manifest = read_manifest(base_path + ".json", "model");
  LoadedCheckpoint out;
  out.config_hash = manifest.at("config_hash").get<std::string>();
  out.model.config = model_config_from_json(manifest.at("model_config"));
  out.model = MoEModel::init(out.model.config);  // allocate shapes
  BlobReader blob(base_path + ".bin", manifest.at("tensors"));
  for (const ParamRef& ref : param_refs(out.model)) *ref.tensor = blob.read(ref.name);
  out.model.version = 0;
  return out;
}

void save_posterior(const LaplacePosterior& post, const std::string& base_path,
                    const std::string& config_hash) {
  BlobWriter blob(base_path + ".bin");
  json experts = json::array();
  for (const auto& [id, c] : post.curvature.experts) {
    const std::string base = to_string(id);
    blob.add(base + ".la", c.la.factor);
    blob.add(base + ".lg", c.lg.factor);
    experts.push_back(
        {{"layer", id.layer}, {"index", id.index}, {"token_count", c.token_count}});
  }
  json treated = json::array();
  for (const ExpertId& id : post.treated)
    treated.push_back({{"layer", id.layer}, {"index", id.index}});

  json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["kind"] = "posterior";
  manifest["config_hash"] = config_hash;
  manifest["lambda"] = post.lambda;
  manifest["treated"] = treated;
  manifest["experts"] = experts;
  manifest["sketch"] = {{"target_rank", post.curvature.sketch.target_rank},
                        {"oversampling", post.curvature.sketch.oversampling},
                        {"seed", post.curvature.sketch.seed}};
  manifest["fisher_mode"] = to_string(post.curvature.mode);
  manifest["fisher_normalization"] = to_string(post.curvature.normalization);
  manifest["source_checkpoint"] = post.curvature.checkpoint_id;
  manifest["never_routed"] = [&] {
    json arr = json::array();
    for (const ExpertId& id : post.curvature.never_routed())
      arr.push_back({{"layer", id.layer}, {"index", id.index}});
    return arr;
  }();
  manifest["tensors"] = blob.index;
  write_manifest(base_path + ".json", std::move(manifest));
}

LoadedPosterior load_posterior(const std::string& base_path, const MoEModel& map_model) {
  const json manifest = read_manifest(base_path + ".json", "posterior");
  LoadedPosterior out;
  out.config_hash = manifest.at("config_hash").get<std::string>();

  CurvatureSet curvature;
  curvature.sketch.target_rank = manifest.at("sketch").at("target_rank").get<int>();
  curvature.sketch.oversampling = manifest.at("sketch").at("oversampling").get<int>();
  curvature.sketch.seed = manifest.at("sketch").at("seed").get<std::uint64_t>();
  curvature.mode = fisher_mode_from_string(manifest.at("fisher_mode").get<std::string>());
  curvature.normalization =
      fisher_normalization_from_string(manifest.at("fisher_normalization").get<std::string>());
  curvature.checkpoint_id = manifest.at("source_checkpoint").get<std::string>();

  BlobReader blob(base_path + ".bin", manifest.at("tensors"));
  for (const auto& entry : manifest.at("experts")) {
    ExpertCurvature c;
    c.id = {entry.at("layer").get<int>(), entry.at("index").get<int>()};
    c.token_count = entry.at("token_count").get<std::int64_t>();
    const std::string base = to_string(c.id);
    c.la = LowRankFactor(blob.read(base + ".la"));
    c.lg = LowRankFactor(blob.read(base + ".lg"));
    curvature.experts.emplace(c.id, std::move(c));
  }

  std::set<ExpertId> treated;
  for (const auto& entry : manifest.at("treated"))
    treated.insert({entry.at("layer").get<int>(), entry.at("index").get<int>()});

  out.posterior = make_posterior(map_model, std::move(curvature),
                                 manifest.at("lambda").get<double>(), std::move(treated));
  return out;
}

}  // namespace bmoe
