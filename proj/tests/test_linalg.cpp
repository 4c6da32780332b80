#include <doctest.h>

#include "bmoe/linalg.hpp"
#include "bmoe/rng.hpp"
#include "oracle/dense_oracle.hpp"

using namespace bmoe;

TEST_CASE("kron matches the block definition") {
  Matrix a(2, 2), b(2, 3);
  a << 1, 2, 3, 4;
  b << 0, 1, 2, 3, 4, 5;
  const Matrix k = kron(a, b);
  REQUIRE(k.rows() == 4);
  REQUIRE(k.cols() == 6);
  CHECK(k(0, 0) == 0.0);
  CHECK(k(0, 1) == 1.0);
  CHECK(k(1, 5) == 2.0 * 5.0);
  CHECK(k(3, 5) == 4.0 * 5.0);
  CHECK((k - oracle::kron(a, b)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kron refuses oversized results") {
  const Matrix a = Matrix::Ones(1 << 13, 1 << 13);
  CHECK_THROWS_AS(kron(a, a), SizeError);
}

TEST_CASE("kron mixed product identity on random factors") {
  Rng rng(17);
  const Matrix a = rng.gaussian_matrix(3, 2), b = rng.gaussian_matrix(4, 2);
  const Matrix lhs = kron(a, b) * kron(a, b).transpose();
  const Matrix rhs = kron(Matrix(a * a.transpose()), Matrix(b * b.transpose()));
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cholesky reconstructs a PD matrix without jitter") {
  Rng rng(3);
  const Matrix b = rng.gaussian_matrix(6, 6);
  const Matrix a = b * b.transpose() + 6.0 * Matrix::Identity(6, 6);
  double jitter = -1.0;
  const Matrix l = cholesky(a, &jitter);
  CHECK(jitter == 0.0);
  CHECK((l * l.transpose() - a).cwiseAbs().maxCoeff() < 1e-10);
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j) CHECK(l(i, j) == 0.0);
}

TEST_CASE("cholesky escalates jitter on a singular matrix") {
  Matrix a = Matrix::Zero(3, 3);
  a(0, 0) = 1.0;
  a(1, 1) = 1.0;  // rank 2, one zero eigenvalue
  double jitter = 0.0;
  const Matrix l = cholesky(a, &jitter);
  CHECK(jitter > 0.0);
  CHECK((l * l.transpose() - a).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("cholesky gives up past the jitter ceiling") {
  Matrix a(2, 2);
  a << 1.0, 0.0, 0.0, -1.0;  // indefinite, trace-positive
  CHECK_THROWS_AS(cholesky(a), DecompositionError);
}

TEST_CASE("svd reconstructs and orders singular values") {
  Rng rng(5);
  const Matrix a = rng.gaussian_matrix(7, 4);
  const SvdResult r = svd(a);
  CHECK((r.u * r.s.asDiagonal() * r.v.transpose() - a).cwiseAbs().maxCoeff() < 1e-10);
  for (int i = 1; i < r.s.size(); ++i) CHECK(r.s[i] <= r.s[i - 1]);
  CHECK(r.s.minCoeff() >= 0.0);
}

TEST_CASE("logdet_dense agrees with the eigenvalue oracle") {
  Rng rng(11);
  const Matrix b = rng.gaussian_matrix(5, 5);
  const Matrix a = b * b.transpose() + Matrix::Identity(5, 5);
  CHECK(logdet_dense(a) == doctest::Approx(oracle::logdet(a)).epsilon(1e-10));
}

TEST_CASE("sketch recovers a stream whose true rank fits the budget") {
  const Eigen::Index dim = 40;
  SketchConfig cfg;
  cfg.target_rank = 5;
  cfg.seed = 21;
  Rng rng(9);
  std::vector<Vector> basis;
  for (int i = 0; i < 3; ++i) basis.push_back(rng.normal_vector(dim));

  RsvdAccumulator acc(dim, cfg);
  Matrix exact = Matrix::Zero(dim, dim);
  for (int t = 0; t < 50; ++t) {
    Vector col = Vector::Zero(dim);
    for (const auto& b : basis) col += rng.normal() * b;
    acc.push(col);
    exact += col * col.transpose();
  }
  CHECK(acc.count() == 50);
  const Matrix implied = acc.factor().implied();
  CHECK((implied - exact).norm() < 1e-8 * std::max(1.0, exact.norm()));
}

TEST_CASE("sketch error on a full-rank stream is near the optimal truncation") {
  const Eigen::Index dim = 30;
  SketchConfig cfg;
  cfg.target_rank = 6;
  cfg.oversampling = 5;
  cfg.seed = 4;
  Rng rng(2);
  RsvdAccumulator acc(dim, cfg);
  Matrix exact = Matrix::Zero(dim, dim);
  for (int t = 0; t < 80; ++t) {
    const Vector col = rng.normal_vector(dim);
    acc.push(col);
    exact += col * col.transpose();
  }
  const Matrix err = exact - acc.factor().implied();
  const double spectral = oracle::symmetric_eigenvalues(Matrix(err.selfadjointView<Eigen::Lower>()))
                              .back();
  const auto ev = oracle::symmetric_eigenvalues(exact);  // ascending
  const double optimal = ev[ev.size() - cfg.target_rank - 1];
  CHECK(spectral <= 10.0 * optimal);
}

TEST_CASE("sketch is deterministic and padded to the target rank") {
  SketchConfig cfg;
  cfg.target_rank = 4;
  cfg.seed = 77;
  Rng rng(1);
  std::vector<Vector> cols;
  for (int t = 0; t < 12; ++t) cols.push_back(rng.normal_vector(10));

  RsvdAccumulator a(10, cfg), b(10, cfg);
  for (const auto& c : cols) {
    a.push(c);
    b.push(c);
  }
  CHECK((a.factor().factor - b.factor().factor).cwiseAbs().maxCoeff() == 0.0);

  RsvdAccumulator single(10, cfg);
  single.push(cols[0]);
  const LowRankFactor f = single.factor();
  CHECK(f.rank() == 4);
  CHECK(f.factor.col(1).squaredNorm() == 0.0);
  CHECK((f.implied() - cols[0] * cols[0].transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("merging sketches approximates the concatenated stream") {
  SketchConfig cfg;
  cfg.target_rank = 3;
  cfg.seed = 8;
  Rng rng(6);
  std::vector<Vector> basis;
  for (int i = 0; i < 2; ++i) basis.push_back(rng.normal_vector(15));

  RsvdAccumulator a(15, cfg), b(15, cfg);
  Matrix exact = Matrix::Zero(15, 15);
  for (int t = 0; t < 20; ++t) {
    Vector col = rng.normal() * basis[0] + rng.normal() * basis[1];
    (t < 10 ? a : b).push(col);
    exact += col * col.transpose();
  }
  a.merge(b);
  CHECK(a.count() == 20);
  CHECK((a.factor().implied() - exact).norm() < 1e-8 * exact.norm());
}

TEST_CASE("rsvd_update folds one column into an existing factor") {
  SketchConfig cfg;
  cfg.target_rank = 3;
  cfg.seed = 31;
  Rng rng(12);
  const Vector c1 = rng.normal_vector(8), c2 = rng.normal_vector(8);
  LowRankFactor f = LowRankFactor::zero(8, 3);
  f = rsvd_update(f, c1, cfg);
  f = rsvd_update(f, c2, cfg);
  const Matrix exact = c1 * c1.transpose() + c2 * c2.transpose();
  CHECK((f.implied() - exact).norm() < 1e-8 * exact.norm());
}

TEST_CASE("sketch rejects mismatched shapes") {
  SketchConfig cfg;
  RsvdAccumulator acc(5, cfg);
  CHECK_THROWS_AS(acc.push(Vector::Ones(4)), ShapeError);
  RsvdAccumulator other(6, cfg);
  CHECK_THROWS_AS(acc.merge(other), ShapeError);
}
