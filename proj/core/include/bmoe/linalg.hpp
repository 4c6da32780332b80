#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace bmoe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DecompositionError : std::runtime_error {
  explicit DecompositionError(const std::string& msg, double jitter_attempted = 0.0)
      : std::runtime_error(msg), jitter(jitter_attempted) {}
  double jitter;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SizeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Kronecker product: block (i,j) of the result is a(i,j) * b.
// Refuses results above kMaxKronEntries entries.
inline constexpr std::int64_t kMaxKronEntries = std::int64_t{1} << 26;
Matrix kron(const Matrix& a, const Matrix& b);

// Lower-triangular L with L L^T = a. On an indefinite input retries with an
// additive jitter of 1e-10 * tr(a)/n escalating x10 up to 1e-4 * tr(a)/n,
// then throws DecompositionError carrying the last jitter attempted.
// Returns the jitter actually applied through *jitter_used if non-null.
Matrix cholesky(const Matrix& a, double* jitter_used = nullptr);

struct SvdResult {
  Matrix u;
  Vector s;  // non-increasing, nonnegative
  Matrix v;
};
SvdResult svd(const Matrix& a);

// log det of a symmetric positive definite matrix via Cholesky (no jitter).
double logdet_dense(const Matrix& a);

struct SketchConfig {
  int target_rank = 10;
  int oversampling = 5;
  std::uint64_t seed = 0;
};

// Tall factor B (dim x rank) representing the PSD matrix B B^T.
struct LowRankFactor {
  Matrix factor;  // dim x rank, rank <= dim

  LowRankFactor() = default;
  explicit LowRankFactor(Matrix f) : factor(std::move(f)) {}
  static LowRankFactor zero(Eigen::Index dim, Eigen::Index rank) {
    return LowRankFactor(Matrix::Zero(dim, rank));
  }

  Eigen::Index dim() const { return factor.rows(); }
  Eigen::Index rank() const { return factor.cols(); }
  Matrix gram() const { return factor.transpose() * factor; }       // rank x rank
  Matrix implied() const { return factor * factor.transpose(); }    // dim x dim (small dims only)
};

// Streaming sketch of sum_t b_t b_t^T as a rank-<=r factor. Never forms any
// dim x dim intermediate: candidates are compressed through a Gaussian sketch
// of width target_rank + oversampling. The sketch matrix is drawn from
// cfg.seed at construction and redrawn every kOmegaRefreshInterval
// compressions to bound drift. Deterministic for a fixed seed + push order.
class RsvdAccumulator {
 public:
  static constexpr int kOmegaRefreshInterval = 10;

  RsvdAccumulator(Eigen::Index dim, const SketchConfig& cfg);

  void push(const Vector& column);
  void merge(const RsvdAccumulator& other);

  // Current factor, truncated to target_rank columns (zero-padded when the
  // stream rank is still below target_rank).
  LowRankFactor factor() const;

  Eigen::Index dim() const { return dim_; }
  std::int64_t count() const { return count_; }
  const SketchConfig& config() const { return cfg_; }

 private:
  void compress(const Matrix& candidate);
  void refresh_omega();

  Eigen::Index dim_;
  SketchConfig cfg_;
  Matrix basis_;   // dim x m, m <= target_rank, current factor columns
  Matrix omega_;   // dim x (target_rank + oversampling)
  std::int64_t count_ = 0;
  std::int64_t compressions_ = 0;
  std::uint64_t omega_epoch_ = 0;
};

// Single-shot form of the streaming update.
LowRankFactor rsvd_update(const LowRankFactor& current, const Vector& new_column,
                          const SketchConfig& cfg);

}  // namespace bmoe
