#include "fmstat/copula.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "fmstat/error.hpp"

namespace fmstat::copula {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

void check_unit(double u) {
  require(u > 0.0 && u < 1.0, ErrorCode::OutOfUnitInterval, "value must lie strictly inside (0, 1)");
}

// Lower-tail quantile for p <= 0.5: rational starting point followed by two
// Halley steps against erfc.
double lower_quantile(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    const double e = normal_cdf(x) - p;
    const double u = e * std::exp(kLogSqrt2Pi + 0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  check_unit(p);
  if (p == 0.5) return 0.0;
  return p < 0.5 ? lower_quantile(p) : -lower_quantile(1.0 - p);
}

std::string to_string(Transform t) { return t == Transform::Logit ? "logit" : "probit"; }

Transform transform_from_string(const std::string& s) {
  if (s == "logit") return Transform::Logit;
  if (s == "probit") return Transform::Probit;
  fail(ErrorCode::InvalidArgument, "unknown transform '" + s + "'");
}

double logit(double u) {
  check_unit(u);
  return std::log(u) - std::log1p(-u);
}

double inv_logit(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double probit(double u) { return normal_quantile(u); }

double inv_probit(double z) { return normal_cdf(z); }

double forward(Transform t, double u) { return t == Transform::Logit ? logit(u) : probit(u); }

double inverse(Transform t, double z) { return t == Transform::Logit ? inv_logit(z) : inv_probit(z); }

double log_forward_jacobian(Transform t, double u) {
  check_unit(u);
  if (t == Transform::Logit) return -std::log(u) - std::log1p(-u);
  const double z = probit(u);
  return kLogSqrt2Pi + 0.5 * z * z;
}

Matrix to_latent(const Matrix& u, Transform t) {
  Matrix z(u.rows(), u.cols());
  for (std::size_t k = 0; k < u.size(); ++k) z.data()[k] = forward(t, u.data()[k]);
  return z;
}

Matrix from_latent(const Matrix& z, Transform t) {
  Matrix u(z.rows(), z.cols());
  for (std::size_t k = 0; k < z.size(); ++k) u.data()[k] = inverse(t, z.data()[k]);
  return u;
}

PseudoObs ranks_to_pseudo(const Matrix& x, std::optional<double> eps) {
  const std::size_t n = x.rows();
  require(n >= 2, ErrorCode::TooFewRows, "pseudo-observations need at least two rows");
  const double nd = static_cast<double>(n);
  PseudoObs out{Matrix(n, x.cols()), eps.value_or(0.5 / nd)};
  require(out.eps >= 0.0 && out.eps < 0.5, ErrorCode::InvalidArgument, "clip level must lie in [0, 0.5)");
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < x.cols(); ++j) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x(a, j) < x(b, j); });
    for (std::size_t s = 0; s < n;) {
      std::size_t e = s + 1;
      while (e < n && x(order[e], j) == x(order[s], j)) ++e;
      // Positions s..e-1 share the average rank (s + 1 + e) / 2.
      const double rank = 0.5 * static_cast<double>(s + 1 + e);
      const double u = std::clamp((rank - 0.5) / nd, out.eps, 1.0 - out.eps);
      for (std::size_t k = s; k < e; ++k) out.u(order[k], j) = u;
      s = e;
    }
  }
  return out;
}

CopulaConfig::CopulaConfig() {
  cfm.train.hidden = {64, 64};
  cfm.train.epochs = 150;
  cfm.train.step_size = 3e-3;
  cfm.train.batch_size = 128;
  cfm.train.cosine_schedule = true;
}

CopulaModel flow_copula_train(const Matrix& x, Transform t, const CopulaConfig& cfg, RngStream& rng) {
  require(x.rows() >= 100, ErrorCode::TooFewRows, "copula training needs at least 100 rows");
  const PseudoObs po = ranks_to_pseudo(x, cfg.eps);
  CopulaModel m;
  m.transform = t;
  m.eps = po.eps;
  m.ode = cfg.ode;
  m.flow = flow::cfm_train(to_latent(po.u, t), cfg.cfm, rng).model;
  return m;
}

Matrix copula_sample(const CopulaModel& m, std::size_t n, RngStream& rng) {
  const std::size_t d = m.flow.state_dim();
  if (n == 0) return Matrix(0, d);
  Matrix u = from_latent(flow::flow_generate(m.flow, n, Matrix(), m.ode, rng), m.transform);
  const double lo = m.eps > 0.0 ? m.eps : std::numeric_limits<double>::min();
  for (std::size_t k = 0; k < u.size(); ++k) u.data()[k] = std::clamp(u.data()[k], lo, 1.0 - lo);
  return u;
}

double copula_log_density(const flow::VelocityFn& v, const flow::DivergenceFn& div, std::span<const double> u,
                          Transform t, const flow::OdeConfig& ode) {
  Vector z(u.size());
  double log_jac = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    z[j] = forward(t, u[j]);
    log_jac += log_forward_jacobian(t, u[j]);
  }
  flow::OdeConfig back = ode;
  back.direction = flow::Direction::Reverse;
  const Vector z0 = flow::ode_integrate(v, z, back);
  double log_rho0 = 0.0;
  for (double x : z0) log_rho0 += -kLogSqrt2Pi - 0.5 * x * x;
  flow::OdeConfig fwd = ode;
  fwd.direction = flow::Direction::Forward;
  return flow::logdensity_along_flow(v, div, z0, log_rho0, fwd).log_density + log_jac;
}

double kendall_tau(const Matrix& u) {
  require(u.cols() == 2, ErrorCode::DimensionMismatch, "Kendall's tau needs two columns");
  const std::size_t n = u.rows();
  require(n >= 2, ErrorCode::TooFewRows, "Kendall's tau needs at least two rows");
  long long s = 0;
  const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for reduction(+ : s) schedule(dynamic, 64)
  for (std::ptrdiff_t i = 0; i < ni; ++i)
    for (std::size_t j = static_cast<std::size_t>(i) + 1; j < n; ++j) {
      const double a = u(static_cast<std::size_t>(i), 0) - u(j, 0), b = u(static_cast<std::size_t>(i), 1) - u(j, 1);
      const double p = a * b;
      s += p > 0 ? 1 : (p < 0 ? -1 : 0);
    }
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return static_cast<double>(s) / pairs;
}

double local_correlation(const Matrix& u, double lo, double hi) {
  require(u.cols() == 2, ErrorCode::DimensionMismatch, "local correlation needs two columns");
  double n = 0, ma = 0, mb = 0;
  for (std::size_t i = 0; i < u.rows(); ++i)
    if (u(i, 0) >= lo && u(i, 0) < hi) {
      n += 1;
      ma += u(i, 0);
      mb += u(i, 1);
    }
  require(n >= 3, ErrorCode::TooFewRows, "fewer than three rows in the window");
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < u.rows(); ++i)
    if (u(i, 0) >= lo && u(i, 0) < hi) {
      sab += (u(i, 0) - ma) * (u(i, 1) - mb);
      saa += (u(i, 0) - ma) * (u(i, 0) - ma);
      sbb += (u(i, 1) - mb) * (u(i, 1) - mb);
    }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

}  // namespace fmstat::copula
