#pragma once

// Independent dense reference implementations for small problem sizes.
// Deliberately naive: straight loops, Gauss-Jordan inversion and a Jacobi
// eigensolver, none of the library's linear-algebra kernels. Eigen matrices
// are used as plain 2-D containers only (coefficient access).

#include <stdexcept>
#include <vector>

#include "bmoe/model.hpp"

namespace oracle {

using bmoe::Matrix;
using bmoe::Vector;

inline constexpr int kMaxWeightDim = 64;  // d_in * d_out guard
inline constexpr int kMaxClasses = 8;

struct OracleSizeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix kron(const Matrix& a, const Matrix& b);

// Gauss-Jordan with partial pivoting.
Matrix inverse(const Matrix& a);

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
std::vector<double> symmetric_eigenvalues(const Matrix& a);

// log det of a symmetric positive definite matrix, via the Jacobi eigenvalues.
double logdet(const Matrix& a);

// Column-major vec: out[j * rows + i] = m(i, j).
Vector vec(const Matrix& m);

// Dense precision H = (la kron lg)(la kron lg)^T + lambda I, built naively.
// la is d_in x r, lg is d_out x r; H is (d_in d_out) square in the ordering
// vec(W)[col * d_out + row] for the d_out x d_in weight.
Matrix dense_precision(const Matrix& la, const Matrix& lg, double lambda);

// Sigma = H^{-1}; predictive class covariance J Sigma J^T where row i of J is
// vec(G_i)^T for the per-class weight Jacobians G_i (d_out x d_in).
Matrix dense_posterior_covariance(const Matrix& la, const Matrix& lg, double lambda,
                                  const std::vector<Matrix>& jacobians);

// Re-derivation of the model forward pass with straight loops, sharing no
// code with the library implementation.
Vector straight_line_forward(const bmoe::MoEModel& model, const Vector& x);

}  // namespace oracle
