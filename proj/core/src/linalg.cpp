#include "bmoe/linalg.hpp"

#include <cmath>

#include "bmoe/rng.hpp"

namespace bmoe {

Matrix kron(const Matrix& a, const Matrix& b) {
  if (a.size() == 0 || b.size() == 0) throw ShapeError("kron: empty operand");
  const std::int64_t rows = std::int64_t{a.rows()} * b.rows();
  const std::int64_t cols = std::int64_t{a.cols()} * b.cols();
  if (rows * cols > kMaxKronEntries)
    throw SizeError("kron: result exceeds size limit (" + std::to_string(rows) + "x" +
                    std::to_string(cols) + ")");
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Matrix cholesky(const Matrix& a, double* jitter_used) {
  if (a.rows() != a.cols()) throw ShapeError("cholesky: matrix not square");
  const Eigen::Index n = a.rows();
  const double trace_scale = a.trace() / static_cast<double>(n);
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Matrix work = a;
    if (jitter > 0.0) work.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(work);
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used = jitter;
      Matrix l = Matrix::Zero(n, n);
      l.triangularView<Eigen::Lower>() = llt.matrixL();
      return l;
    }
    if (trace_scale <= 0.0) break;
    jitter = (jitter == 0.0) ? 1e-10 * trace_scale : jitter * 10.0;
    if (jitter > 1e-4 * trace_scale * 10.0) break;
  }
  throw DecompositionError("cholesky: not positive definite after jitter ladder", jitter);
}

SvdResult svd(const Matrix& a) {
  if (a.size() == 0) throw ShapeError("svd: empty matrix");
  Eigen::JacobiSVD<Matrix> solver(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

double logdet_dense(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("logdet_dense: matrix not square");
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success)
    throw DecompositionError("logdet_dense: matrix not positive definite");
  return 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}

RsvdAccumulator::RsvdAccumulator(Eigen::Index dim, const SketchConfig& cfg)
    : dim_(dim), cfg_(cfg), basis_(dim, 0) {
  if (cfg.target_rank < 1) throw SizeError("SketchConfig: target_rank must be >= 1");
  if (cfg.oversampling < 0) throw SizeError("SketchConfig: oversampling must be >= 0");
  refresh_omega();
}

void RsvdAccumulator::refresh_omega() {
  Rng rng(mix_seed(cfg_.seed, omega_epoch_++));
  omega_ = rng.gaussian_matrix(dim_, cfg_.target_rank + cfg_.oversampling);
}

void RsvdAccumulator::push(const Vector& column) {
  if (column.size() != dim_)
    throw ShapeError("RsvdAccumulator: column length " + std::to_string(column.size()) +
                     " != dim " + std::to_string(dim_));
  ++count_;
  if (column.squaredNorm() == 0.0) return;
  Matrix candidate(dim_, basis_.cols() + 1);
  candidate << basis_, column;
  compress(candidate);
}

void RsvdAccumulator::merge(const RsvdAccumulator& other) {
  if (other.dim_ != dim_) throw ShapeError("RsvdAccumulator: merge dim mismatch");
  count_ += other.count_;
  if (other.basis_.cols() == 0) return;
  Matrix candidate(dim_, basis_.cols() + other.basis_.cols());
  candidate << basis_, other.basis_;
  compress(candidate);
}

void RsvdAccumulator::compress(const Matrix& candidate) {
  if (candidate.cols() <= cfg_.target_rank) {
    basis_ = candidate;
    return;
  }
  if (++compressions_ % kOmegaRefreshInterval == 0) refresh_omega();
  // Sketch of candidate * candidate^T without forming the dim x dim Gram.
  const Matrix y = candidate * (candidate.transpose() * omega_);
  const Eigen::Index k = std::min<Eigen::Index>(dim_, y.cols());
  Eigen::HouseholderQR<Matrix> qr(y);
  const Matrix q = qr.householderQ() * Matrix::Identity(dim_, k);
  const Matrix small = q.transpose() * candidate;
  Eigen::JacobiSVD<Matrix> solver(small, Eigen::ComputeThinU);
  const Eigen::Index keep = std::min<Eigen::Index>(cfg_.target_rank, solver.singularValues().size());
  basis_ = q * solver.matrixU().leftCols(keep) *
           solver.singularValues().head(keep).asDiagonal();
}

LowRankFactor RsvdAccumulator::factor() const {
  Matrix out = Matrix::Zero(dim_, cfg_.target_rank);
  const Eigen::Index m = std::min<Eigen::Index>(basis_.cols(), cfg_.target_rank);
  out.leftCols(m) = basis_.leftCols(m);
  return LowRankFactor(std::move(out));
}

LowRankFactor rsvd_update(const LowRankFactor& current, const Vector& new_column,
                          const SketchConfig& cfg) {
  RsvdAccumulator acc(current.dim(), cfg);
  // Seed the accumulator with the existing factor columns, then stream.
  for (Eigen::Index j = 0; j < current.rank(); ++j) {
    if (current.factor.col(j).squaredNorm() > 0.0) acc.push(current.factor.col(j));
  }
  acc.push(new_column);
  return acc.factor();
}

}  // namespace bmoe
