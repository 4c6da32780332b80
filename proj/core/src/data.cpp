#include "bmoe/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bmoe/rng.hpp"

namespace bmoe {

using nlohmann::json;

void SyntheticSpec::validate() const {
  if (generator != "blobs" && generator != "xor-rings" && generator != "shifted-blobs")
    throw ConfigError("synthetic.generator: unknown generator '" + generator + "'");
  if (num_classes < 2) throw ConfigError("synthetic.num_classes: must be >= 2");
  if (dim < 1) throw ConfigError("synthetic.dim: must be >= 1");
  if (noise < 0.0) throw ConfigError("synthetic.noise: must be >= 0");
  if (train_n < 1 || val_n < 1 || test_n < 1)
    throw ConfigError("synthetic: split sizes must be >= 1");
}

Vector encode_text(const std::string& text, int d_input) {
  Vector v = Vector::Zero(d_input);
  if (text.size() < 3) return v;
  for (std::size_t i = 0; i + 3 <= text.size(); ++i) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (std::size_t j = i; j < i + 3; ++j) {
      h ^= static_cast<unsigned char>(text[j]);
      h *= 1099511628211ULL;
    }
    const int bucket = static_cast<int>(h % static_cast<std::uint64_t>(d_input));
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[bucket] += sign;
  }
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

Dataset load_jsonl(const std::string& path, int d_input, const std::string& split_tag) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  Dataset ds;
  ds.split = split_tag;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (row.contains("x")) {
      const auto& xs = row.at("x");
      Vector x(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) x[i] = xs[i].get<double>();
      if (x.size() != d_input)
        throw IoError(path + ":" + std::to_string(lineno) + ": feature length " +
                      std::to_string(x.size()) + " != d_input " + std::to_string(d_input));
      ds.features.push_back(std::move(x));
      ds.labels.push_back(row.at("y").get<int>());
    } else if (row.contains("question")) {
      std::ostringstream text;
      text << row.at("question").get<std::string>();
      for (const auto& c : row.at("choices")) text << " | " << c.get<std::string>();
      ds.features.push_back(encode_text(text.str(), d_input));
      ds.labels.push_back(row.at("answer").get<int>());
    } else {
      throw IoError(path + ":" + std::to_string(lineno) + ": unrecognized row schema");
    }
  }
  return ds;
}

void save_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  out.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    json row;
    std::vector<double> xs(ds.features[i].data(), ds.features[i].data() + ds.features[i].size());
    row["x"] = xs;
    row["y"] = ds.labels[i];
    out << row.dump() << "\n";
  }
}

namespace {

Dataset sample_blobs(const std::vector<Vector>& means, double noise, int n,
                     const std::string& tag, Rng& rng) {
  Dataset ds;
  ds.split = tag;
  const int num_classes = static_cast<int>(means.size());
  for (int i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.next_u64() % num_classes);
    Vector x = means[y] + noise * rng.normal_vector(means[y].size());
    ds.features.push_back(std::move(x));
    ds.labels.push_back(y);
  }
  return ds;
}

Dataset sample_xor_rings(const SyntheticSpec& spec, int n, const std::string& tag, Rng& rng) {
  // Concentric rings in the first two dims; class alternates with ring index.
  Dataset ds;
  ds.split = tag;
  const int rings = 2 * spec.num_classes;
  for (int i = 0; i < n; ++i) {
    const int ring = static_cast<int>(rng.next_u64() % rings);
    const int y = ring % spec.num_classes;
    const double radius = 1.5 * (ring + 1) + 0.3 * spec.noise * rng.normal();
    const double theta = 2.0 * M_PI * rng.uniform();
    Vector x = 0.2 * spec.noise * rng.normal_vector(spec.dim);
    x[0] += radius * std::cos(theta);
    if (spec.dim > 1) x[1] += radius * std::sin(theta);
    ds.features.push_back(std::move(x));
    ds.labels.push_back(y);
  }
  return ds;
}

}  // namespace

GeneratedData generate(const SyntheticSpec& spec) {
  spec.validate();
  GeneratedData out;
  Rng rng(spec.seed);
  if (spec.generator == "xor-rings") {
    out.train = sample_xor_rings(spec, spec.train_n, "train", rng);
    out.val = sample_xor_rings(spec, spec.val_n, "val", rng);
    out.test = sample_xor_rings(spec, spec.test_n, "test", rng);
    return out;
  }
  std::vector<Vector> means;
  for (int c = 0; c < spec.num_classes; ++c) means.push_back(2.5 * rng.normal_vector(spec.dim));
  out.class_means = means;
  out.train = sample_blobs(means, spec.noise, spec.train_n, "train", rng);
  out.val = sample_blobs(means, spec.noise, spec.val_n, "val", rng);
  out.test = sample_blobs(means, spec.noise, spec.test_n, "test", rng);
  if (spec.generator == "shifted-blobs") {
    Vector direction = rng.normal_vector(spec.dim);
    if (direction.norm() > 0.0) direction.normalize();
    std::vector<Vector> shifted;
    for (const Vector& m : means) shifted.push_back(m + spec.shift * direction);
    out.ood = sample_blobs(shifted, spec.noise, spec.ood_n, "ood", rng);
  }
  return out;
}

}  // namespace bmoe
