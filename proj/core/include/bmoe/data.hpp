#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bmoe/linalg.hpp"

namespace bmoe {

struct Dataset {
  std::vector<Vector> features;
  std::vector<int> labels;
  std::string split;  // train | val | test | ood

  std::size_t size() const { return features.size(); }
  bool empty() const { return features.empty(); }
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSONL rows are either {"x": [floats], "y": int} or the multiple-choice
// schema {"question": str, "choices": [str], "answer": int}, which is mapped
// through the feature-hashing encoder below.
Dataset load_jsonl(const std::string& path, int d_input, const std::string& split_tag);
void save_jsonl(const Dataset& ds, const std::string& path);

// Character trigram feature hashing into d_input signed buckets, L2-normalized.
Vector encode_text(const std::string& text, int d_input);

struct SyntheticSpec {
  std::string generator = "blobs";  // blobs | xor-rings | shifted-blobs
  int num_classes = 3;
  int dim = 10;
  double noise = 1.0;
  double shift = 2.0;  // OOD mean shift, shifted-blobs only
  std::uint64_t seed = 0;
  int train_n = 1024;
  int val_n = 256;
  int test_n = 256;
  int ood_n = 256;

  void validate() const;
};

struct GeneratedData {
  Dataset train, val, test;
  std::optional<Dataset> ood;       // present for shifted-blobs
  std::vector<Vector> class_means;  // blob generators only
};

GeneratedData generate(const SyntheticSpec& spec);

}  // namespace bmoe
