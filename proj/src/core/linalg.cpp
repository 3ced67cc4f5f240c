#include "fmstat/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fmstat/rng.hpp"

namespace fmstat {

namespace {

constexpr double kPivotRel = 1e-12;
constexpr double kSymmetryTol = 1e-12;

bool factor_into(const Matrix& a, Matrix& l) {
  const std::size_t n = a.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, a(i, i));
  if (!(max_diag > 0.0)) return false;
  const double floor = kPivotRel * max_diag;
  l = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    const double* lj = l.row(j).data();
    for (std::size_t k = 0; k < j; ++k) diag -= lj[k] * lj[k];
    if (!(diag > floor)) return false;
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      const double* li = l.row(i).data();
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      l(i, j) = s / ljj;
    }
  }
  return true;
}

void check_symmetric(const Matrix& a) {
  require(a.square(), ErrorCode::NotSquare, "cholesky of non-square matrix");
  const double scale = std::max(1.0, max_abs(a));
  require(max_asymmetry(a) <= kSymmetryTol * scale, ErrorCode::InvalidArgument, "cholesky input is not symmetric");
}

void forward_sub(const Matrix& l, double* x) {
  const std::size_t n = l.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    const double* li = l.row(i).data();
    for (std::size_t k = 0; k < i; ++k) s -= li[k] * x[k];
    x[i] = s / li[i];
  }
}

void backward_sub_transposed(const Matrix& l, double* x) {
  const std::size_t n = l.rows();
  for (std::size_t ii = n; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
}

}  // namespace

SpdFactor cholesky(const Matrix& a) {
  check_symmetric(a);
  SpdFactor f;
  if (!factor_into(a, f.lower)) fail(ErrorCode::NotPositiveDefinite, "non-positive pivot in Cholesky factorization");
  return f;
}

bool try_cholesky(const Matrix& a, SpdFactor& out) {
  if (!a.square() || !a.all_finite()) return false;
  return factor_into(a, out.lower);
}

Vector solve_spd(const SpdFactor& f, std::span<const double> b) {
  require(b.size() == f.dim(), ErrorCode::DimensionMismatch, "solve_spd right-hand side");
  Vector x(b.begin(), b.end());
  forward_sub(f.lower, x.data());
  backward_sub_transposed(f.lower, x.data());
  return x;
}

Matrix solve_spd(const SpdFactor& f, const Matrix& b) {
  require(b.rows() == f.dim(), ErrorCode::DimensionMismatch, "solve_spd right-hand side");
  Matrix bt = b.transpose();
  for (std::size_t c = 0; c < bt.rows(); ++c) {
    forward_sub(f.lower, bt.row(c).data());
    backward_sub_transposed(f.lower, bt.row(c).data());
  }
  return bt.transpose();
}

Matrix inverse_spd(const SpdFactor& f) {
  const std::size_t n = f.dim();
  // Columns of the identity, stored as rows since the inverse is symmetric.
  Matrix inv = Matrix::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    forward_sub(f.lower, inv.row(c).data());
    backward_sub_transposed(f.lower, inv.row(c).data());
  }
  return symmetrize(inv);
}

double logdet_spd(const SpdFactor& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.dim(); ++i) s += std::log(f.lower(i, i));
  return 2.0 * s;
}

Vector solve(Matrix a, Vector b) {
  require(a.square() && a.rows() == b.size(), ErrorCode::DimensionMismatch, "solve");
  const std::size_t n = a.rows();
  const double scale = std::max(max_abs(a), std::numeric_limits<double>::min());
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (std::abs(a(piv, k)) <= 1e-13 * scale) fail(ErrorCode::SingularSystem, "singular linear system");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = a(i, k) / a(k, k);
      if (m == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a(i, j) -= m * a(k, j);
      b[i] -= m * b[k];
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * b[j];
    b[ii] = s / a(ii, ii);
  }
  return b;
}

Matrix matrix_exp(const Matrix& a, double t) {
  require(a.square(), ErrorCode::NotSquare, "matrix_exp of non-square matrix");
  const std::size_t n = a.rows();
  Matrix ta = a * t;
  require(ta.all_finite(), ErrorCode::Overflow, "matrix_exp input not finite");
  const double norm = norm_inf(ta);
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  ta *= std::ldexp(1.0, -squarings);

  constexpr int kOrder = 12;
  // Horner form: I + X(I + X/2(I + X/3(...))).
  Matrix result = Matrix::identity(n);
  for (int k = kOrder; k >= 1; --k) {
    result = ta * result;
    result *= 1.0 / k;
    for (std::size_t i = 0; i < n; ++i) result(i, i) += 1.0;
  }
  for (int s = 0; s < squarings; ++s) result = result * result;
  require(result.all_finite(), ErrorCode::Overflow, "matrix_exp overflowed");
  return result;
}

double op_norm_sym(const Matrix& a, PowerIterationOptions opt) {
  require(a.square(), ErrorCode::NotSquare, "op_norm_sym of non-square matrix");
  const std::size_t n = a.rows();
  if (n == 0) return 0.0;
  if (max_abs(a) == 0.0) return 0.0;
  RngStream rng(0x5eed, 0);
  Vector v(n);
  for (auto& x : v) x = 1.0 + rng.uniform();
  double nv = norm2(v);
  for (auto& x : v) x /= nv;

  double prev = 0.0;
  for (int it = 0; it < opt.max_iter; ++it) {
    Vector w = a * v;
    const double est = norm2(w);
    if (est == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / est;
    if (it > 2 && std::abs(est - prev) <= opt.tol * est) return est;
    prev = est;
  }
  fail(ErrorCode::NoConvergence, "power iteration hit its iteration cap");
}

double op_norm_sym_or_bound(const Matrix& a) {
  try {
    return op_norm_sym(a);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoConvergence) throw;
    return frobenius(a);
  }
}

double spectral_norm(const Matrix& a) {
  const Matrix ata = symmetrize(a.transpose() * a);
  return std::sqrt(op_norm_sym_or_bound(ata));
}

Vector eigenvalues_sym(const Matrix& input) {
  require(input.square(), ErrorCode::NotSquare, "eigenvalues_sym");
  Matrix a = symmetrize(input);
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off <= 1e-30 * std::max(1.0, frobenius(a) * frobenius(a))) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  Vector ev = a.diagonal();
  std::sort(ev.begin(), ev.end());
  return ev;
}

double min_eigenvalue_sym(const Matrix& a) {
  const Vector ev = eigenvalues_sym(a);
  return ev.empty() ? 0.0 : ev.front();
}

Vector least_squares(const Matrix& x, std::span<const double> y) {
  require(x.rows() == y.size(), ErrorCode::DimensionMismatch, "least_squares");
  const std::size_t p = x.cols();
  Matrix xtx(p, p);
  Vector xty(p, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    for (std::size_t a = 0; a < p; ++a) {
      xty[a] += r[a] * y[i];
      for (std::size_t b = a; b < p; ++b) xtx(a, b) += r[a] * r[b];
    }
  }
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < a; ++b) xtx(a, b) = xtx(b, a);
  SpdFactor f;
  if (!try_cholesky(xtx, f)) fail(ErrorCode::SingularDesign, "design matrix is rank deficient");
  return solve_spd(f, xty);
}

}  // namespace fmstat
