#pragma once

// Data-parallel inner loops. Every kernel has a serial reference in
// kernels::serial and an OpenMP version in kernels::parallel; the two must
// agree to rounding (tests/test_core.cpp, bench/bench_kernels.cpp).

#include <cstddef>
#include <span>

#include "fmstat/matrix.hpp"

namespace fmstat::kernels {

int max_threads() noexcept;
void set_threads(int n) noexcept;

namespace serial {

Matrix gemm(const Matrix& a, const Matrix& b);
/// Rows of x against rows of y: out(i, j) = ||x_i - y_j||^2.
Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y);
/// (1/n) * sum_i (x_i - mean)(x_i - mean)^T over the rows of x.
Matrix centered_covariance(const Matrix& x);
/// sum_{i != j} w_i w_j u_ij for symmetric u.
double offdiag_quadratic(const Matrix& u, std::span<const double> w);

template <class F>
Matrix symmetric_gram(std::size_t n, F&& f) {
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) g(i, j) = g(j, i) = f(i, j);
  return g;
}

}  // namespace serial

namespace parallel {

Matrix gemm(const Matrix& a, const Matrix& b);
Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y);
Matrix centered_covariance(const Matrix& x);
double offdiag_quadratic(const Matrix& u, std::span<const double> w);

template <class F>
Matrix symmetric_gram(std::size_t n, F&& f) {
  Matrix g(n, n);
  const auto ni = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 8)
  for (long i = 0; i < ni; ++i)
    for (std::size_t j = static_cast<std::size_t>(i); j < n; ++j)
      g(static_cast<std::size_t>(i), j) = f(static_cast<std::size_t>(i), j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

}  // namespace parallel

}  // namespace fmstat::kernels
