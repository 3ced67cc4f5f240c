#include "fmstat/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fmstat::kernels {

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) noexcept {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {

void check_gemm(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorCode::DimensionMismatch, "gemm inner dimensions");
}

// out.row(i) = sum_k a(i,k) * b.row(k); the inner axpy is contiguous.
inline void gemm_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  double* o = out.row(i).data();
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double aik = a(i, k);
    if (aik == 0.0) continue;
    const double* br = b.row(k).data();
    for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
  }
}

inline void sq_dist_row(const Matrix& x, const Matrix& y, Matrix& out, std::size_t i) {
  for (std::size_t j = 0; j < y.rows(); ++j) out(i, j) = squared_distance(x.row(i), y.row(j));
}

Vector column_means(const Matrix& x) {
  Vector mean(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(i, j);
  for (auto& m : mean) m /= static_cast<double>(x.rows());
  return mean;
}

Matrix centered(const Matrix& x) {
  const Vector mean = column_means(x);
  Matrix c = x;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) -= mean[j];
  return c;
}

void check_quadratic(const Matrix& u, std::span<const double> w) {
  require(u.square() && u.rows() == w.size(), ErrorCode::DimensionMismatch, "offdiag_quadratic");
}

}  // namespace

namespace serial {

Matrix gemm(const Matrix& a, const Matrix& b) {
  check_gemm(a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) gemm_row(a, b, out, i);
  return out;
}

Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y) {
  require(x.cols() == y.cols(), ErrorCode::DimensionMismatch, "pairwise_sq_dist");
  Matrix out(x.rows(), y.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) sq_dist_row(x, y, out, i);
  return out;
}

Matrix centered_covariance(const Matrix& x) {
  require(x.rows() >= 1, ErrorCode::EmptySample, "covariance of empty sample");
  const Matrix c = centered(x);
  const std::size_t d = x.cols();
  Matrix s(d, d);
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double ca = c(i, a);
      for (std::size_t b = a; b < d; ++b) s(a, b) += ca * c(i, b);
    }
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) s(b, a) = s(a, b) = s(a, b) * inv_n;
  return s;
}

double offdiag_quadratic(const Matrix& u, std::span<const double> w) {
  check_quadratic(u, w);
  double total = 0.0;
  for (std::size_t i = 0; i < u.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < u.cols(); ++j)
      if (j != i) row += u(i, j) * w[j];
    total += w[i] * row;
  }
  return total;
}

}  // namespace serial

namespace parallel {

Matrix gemm(const Matrix& a, const Matrix& b) {
  check_gemm(a, b);
  Matrix out(a.rows(), b.cols());
  const long n = static_cast<long>(a.rows());
#pragma omp parallel for schedule(static) if (n * static_cast<long>(b.cols()) > 4096)
  for (long i = 0; i < n; ++i) gemm_row(a, b, out, static_cast<std::size_t>(i));
  return out;
}

Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y) {
  require(x.cols() == y.cols(), ErrorCode::DimensionMismatch, "pairwise_sq_dist");
  Matrix out(x.rows(), y.rows());
  const long n = static_cast<long>(x.rows());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) sq_dist_row(x, y, out, static_cast<std::size_t>(i));
  return out;
}

Matrix centered_covariance(const Matrix& x) {
  require(x.rows() >= 1, ErrorCode::EmptySample, "covariance of empty sample");
  const Matrix c = centered(x);
  const std::size_t d = x.cols();
  Matrix s(d, d);
  const long nd = static_cast<long>(d);
  // Each thread owns whole rows of s, so the accumulation order per entry
  // matches the serial kernel.
#pragma omp parallel for schedule(dynamic, 4)
  for (long a = 0; a < nd; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    for (std::size_t i = 0; i < c.rows(); ++i) {
      const double ca = c(i, ua);
      for (std::size_t b = ua; b < d; ++b) s(ua, b) += ca * c(i, b);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) s(b, a) = s(a, b) = s(a, b) * inv_n;
  return s;
}

double offdiag_quadratic(const Matrix& u, std::span<const double> w) {
  check_quadratic(u, w);
  const long n = static_cast<long>(u.rows());
  Vector partial(u.rows(), 0.0);
#pragma omp parallel for schedule(static)
  for (long il = 0; il < n; ++il) {
    const auto i = static_cast<std::size_t>(il);
    double row = 0.0;
    for (std::size_t j = 0; j < u.cols(); ++j)
      if (j != i) row += u(i, j) * w[j];
    partial[i] = w[i] * row;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace parallel

}  // namespace fmstat::kernels
