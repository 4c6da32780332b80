#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bmoe/data.hpp"

using namespace bmoe;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("jsonl round trip preserves features and labels") {
  Dataset ds;
  ds.split = "train";
  Vector a(3), b(3);
  a << 0.25, -1.5, 3.0;
  b << 1e-9, 2.0, -0.125;
  ds.features = {a, b};
  ds.labels = {0, 2};

  TempFile f("bmoe_roundtrip.jsonl");
  save_jsonl(ds, f.path);
  const Dataset back = load_jsonl(f.path, 3, "train");
  REQUIRE(back.size() == 2);
  CHECK(back.labels == ds.labels);
  for (int i = 0; i < 2; ++i)
    CHECK((back.features[i] - ds.features[i]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jsonl loader accepts the multiple-choice schema") {
  TempFile f("bmoe_mc.jsonl");
  {
    std::ofstream out(f.path);
    out << R"({"question": "which is largest?", "choices": ["ant", "whale", "cat"], "answer": 1})"
        << "\n";
  }
  const Dataset ds = load_jsonl(f.path, 8, "test");
  REQUIRE(ds.size() == 1);
  CHECK(ds.labels[0] == 1);
  CHECK(ds.features[0].size() == 8);
  CHECK(ds.features[0].norm() == doctest::Approx(1.0));
}

TEST_CASE("jsonl loader reports file and line on malformed rows") {
  TempFile f("bmoe_bad.jsonl");
  {
    std::ofstream out(f.path);
    out << R"({"x": [1.0, 2.0], "y": 0})" << "\n";
    out << "not json\n";
  }
  try {
    load_jsonl(f.path, 2, "train");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("jsonl loader rejects wrong feature width and missing files") {
  TempFile f("bmoe_width.jsonl");
  {
    std::ofstream out(f.path);
    out << R"({"x": [1.0, 2.0, 3.0], "y": 0})" << "\n";
  }
  CHECK_THROWS_AS(load_jsonl(f.path, 2, "train"), IoError);
  CHECK_THROWS_AS(load_jsonl("/nonexistent/nope.jsonl", 2, "train"), IoError);
}

TEST_CASE("encode_text is deterministic and normalized") {
  const Vector a = encode_text("the quick brown fox", 16);
  const Vector b = encode_text("the quick brown fox", 16);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.norm() == doctest::Approx(1.0));
  CHECK(encode_text("ab", 16).norm() == 0.0);  // too short for a trigram
}

TEST_CASE("blobs generator is seeded and respects split sizes") {
  SyntheticSpec spec;
  spec.train_n = 20;
  spec.val_n = 7;
  spec.test_n = 5;
  spec.seed = 9;
  const GeneratedData a = generate(spec);
  const GeneratedData b = generate(spec);
  CHECK(a.train.size() == 20);
  CHECK(a.val.size() == 7);
  CHECK(a.test.size() == 5);
  CHECK_FALSE(a.ood.has_value());
  CHECK(a.class_means.size() == 3);
  for (std::size_t i = 0; i < a.train.size(); ++i)
    CHECK((a.train.features[i] - b.train.features[i]).cwiseAbs().maxCoeff() == 0.0);

  SyntheticSpec other = spec;
  other.seed = 10;
  const GeneratedData c = generate(other);
  CHECK((a.train.features[0] - c.train.features[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("shifted-blobs adds an OOD split displaced by the shift") {
  SyntheticSpec spec;
  spec.generator = "shifted-blobs";
  spec.noise = 0.0;  // samples sit exactly on the means
  spec.shift = 4.0;
  spec.ood_n = 30;
  spec.seed = 3;
  const GeneratedData d = generate(spec);
  REQUIRE(d.ood.has_value());
  CHECK(d.ood->size() == 30);
  for (std::size_t i = 0; i < d.ood->size(); ++i) {
    const Vector& x = d.ood->features[i];
    const Vector& mean = d.class_means[d.ood->labels[i]];
    CHECK((x - mean).norm() == doctest::Approx(4.0));
  }
}

TEST_CASE("xor-rings uses alternating ring labels in the first two dims") {
  SyntheticSpec spec;
  spec.generator = "xor-rings";
  spec.num_classes = 2;
  spec.noise = 0.0;
  spec.train_n = 200;
  const GeneratedData d = generate(spec);
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const double r = std::hypot(d.train.features[i][0], d.train.features[i][1]);
    const int ring = static_cast<int>(std::lround(r / 1.5)) - 1;
    CHECK(ring % 2 == d.train.labels[i]);
  }
}

TEST_CASE("generator spec validation") {
  SyntheticSpec spec;
  spec.generator = "mystery";
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec.generator = "blobs";
  spec.num_classes = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
