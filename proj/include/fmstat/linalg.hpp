#pragma once

#include <span>

#include "fmstat/matrix.hpp"

namespace fmstat {

/// Lower-triangular Cholesky factor L with L * L^T = A.
struct SpdFactor {
  Matrix lower;
  std::size_t dim() const noexcept { return lower.rows(); }
};

/// Throws NotPositiveDefinite when a pivot falls to 1e-12 * max diagonal or
/// below, and InvalidArgument when `a` is not symmetric within 1e-12
/// (relative to its largest entry).
SpdFactor cholesky(const Matrix& a);

/// Non-throwing variant for step-halving loops.
bool try_cholesky(const Matrix& a, SpdFactor& out);

Vector solve_spd(const SpdFactor& f, std::span<const double> b);
Matrix solve_spd(const SpdFactor& f, const Matrix& b);
Matrix inverse_spd(const SpdFactor& f);
double logdet_spd(const SpdFactor& f);

/// Dense general solve by partial-pivot LU. Throws SingularSystem.
Vector solve(Matrix a, Vector b);

/// e^{tA} by scaling and squaring with an order-12 Taylor series.
Matrix matrix_exp(const Matrix& a, double t = 1.0);

struct PowerIterationOptions {
  int max_iter = 20000;
  double tol = 1e-14;
};

/// Largest absolute eigenvalue of a symmetric matrix by power iteration.
/// Throws NoConvergence when the cap is hit.
double op_norm_sym(const Matrix& a, PowerIterationOptions opt = {});

/// op_norm_sym with a Frobenius-norm fallback on NoConvergence.
double op_norm_sym_or_bound(const Matrix& a);

/// Largest singular value of a general matrix, sqrt(op_norm_sym(A^T A)).
double spectral_norm(const Matrix& a);

/// Eigenvalues of a symmetric matrix by cyclic Jacobi, ascending.
Vector eigenvalues_sym(const Matrix& a);
double min_eigenvalue_sym(const Matrix& a);

/// Ordinary least squares via the normal equations (Cholesky). Throws
/// SingularDesign.
Vector least_squares(const Matrix& x, std::span<const double> y);

}  // namespace fmstat
