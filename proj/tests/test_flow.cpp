#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "fmstat/flow.hpp"
#include "fmstat/kernels.hpp"
#include "fmstat/linalg.hpp"

using namespace fmstat;
using namespace fmstat::flow;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] = scale * rng.normal();
  return m;
}

VelocityFn linear_field(const Matrix& a) {
  return [a](double, std::span<const double> x) { return a * x; };
}

double brute_force_assignment(const Matrix& c) {
  std::vector<std::size_t> p(c.rows());
  std::iota(p.begin(), p.end(), 0);
  double best = INFINITY;
  do {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += c(i, p[i]);
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

// Sorted-sample W1 between equal-size samples.
double w1_sorted(Vector a, Vector b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::pair<double, double> mean_sd(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1))};
}

double endpoint_error(Scheme s, std::size_t k, const Matrix& a, const Vector& x0) {
  const Vector exact = matrix_exp(a, 1.0) * x0;
  const Vector got = ode_integrate(linear_field(a), x0, {k, s, Direction::Forward});
  return std::sqrt(squared_distance(got, exact));
}

double loglog_slope(const std::vector<double>& ks, const std::vector<double>& errs) {
  // Least squares slope of log err against log h = -log K.
  const std::size_t n = ks.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += -std::log(ks[i]) / n;
    my += std::log(errs[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = -std::log(ks[i]) - mx;
    sxy += dx * (std::log(errs[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace

TEST(LinearPath, Arithmetic) {
  const auto s = linear_path(Vector{0.0}, Vector{1.0}, 0.5);
  EXPECT_EQ(s.xt[0], 0.5);
  EXPECT_EQ(s.u[0], 1.0);
  const Vector x0{1.0, -2.0}, x1{3.0, 5.0};
  EXPECT_EQ(linear_path(x0, x1, 0.0).xt, x0);
  EXPECT_EQ(linear_path(x0, x1, 1.0).xt, x1);
  EXPECT_THROW(linear_path(x0, Vector{1.0}, 0.2), Error);
  EXPECT_THROW(linear_path(x0, x1, 1.5), Error);
}

TEST(LinearPath, ConditionalFormMatchesPairwiseTarget) {
  RngStream rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    Vector x0(3), x1(3);
    for (auto& v : x0) v = rng.normal();
    for (auto& v : x1) v = 3 * rng.normal();
    const double t = rng.uniform(0.0, 0.999);
    const auto s = linear_path(x0, x1, t);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR((x1[i] - s.xt[i]) / (1 - t), s.u[i], 1e-9 * (1 + std::abs(s.u[i])) / (1 - t));
  }
}

TEST(Assignment, SmallCases) {
  const auto p = ot_assignment(Matrix{{0, 1}, {1, 0}});
  EXPECT_EQ(*p.permutation, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(p.cost(Matrix{{0, 1}, {1, 0}}), 0.0);
  EXPECT_EQ(*ot_assignment(Matrix{{4.0}}).permutation, (std::vector<std::size_t>{0}));
  EXPECT_EQ(*ot_assignment(Matrix{{1, 0}, {0, 1}}).permutation, (std::vector<std::size_t>{1, 0}));
  EXPECT_THROW(ot_assignment(Matrix(2, 3)), Error);
}

TEST(Assignment, MatchesBruteForceUpToSeven) {
  RngStream rng(2);
  for (std::size_t m = 1; m <= 7; ++m)
    for (int rep = 0; rep < (m == 6 ? 20 : 5); ++rep) {
      Matrix c(m, m);
      for (std::size_t k = 0; k < c.size(); ++k) c.data()[k] = rep % 2 ? rng.uniform() : std::floor(4 * rng.uniform());
      const auto plan = ot_assignment(c);
      auto perm = *plan.permutation;
      std::sort(perm.begin(), perm.end());
      for (std::size_t i = 0; i < m; ++i) EXPECT_EQ(perm[i], i);
      EXPECT_NEAR(plan.cost(c), brute_force_assignment(c), 1e-12) << "m=" << m;
    }
}

TEST(Assignment, SquaredDistanceOnLineIsMonotone) {
  // For convex costs on the line the optimal matching pairs order statistics.
  RngStream rng(3);
  Matrix x1 = random_matrix(40, 1, rng), x0 = random_matrix(40, 1, rng);
  const auto perm = *ot_assignment(pairing_cost(x1, x0)).permutation;
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 40; ++j)
      if (x1(i, 0) < x1(j, 0)) EXPECT_LE(x0(perm[i], 0), x0(perm[j], 0));
}

TEST(Sinkhorn, ZeroCostGivesUniformPlan) {
  const auto p = sinkhorn(Matrix(5, 5), 0.1);
  for (std::size_t k = 0; k < 25; ++k) EXPECT_NEAR(p.plan->data()[k], 1.0 / 25.0, 1e-14);
}

TEST(Sinkhorn, TwoByTwoConcentratesOnDiagonal) {
  const auto p = *sinkhorn(Matrix{{0, 1}, {1, 0}}, 0.01).plan;
  EXPECT_LT(p(0, 1), 0.05 / 2);
  EXPECT_LT(p(1, 0), 0.05 / 2);
  // Closed form: the off-diagonal mass q solves q / (1/2 - q) = exp(-1 / eps).
  for (double eps : {0.3, 1.0}) {
    const auto pe = *sinkhorn(Matrix{{0, 1}, {1, 0}}, eps).plan;
    const double r = std::exp(-1.0 / eps);
    EXPECT_NEAR(pe(0, 1), 0.5 * r / (1 + r), 1e-10);
  }
}

TEST(Sinkhorn, FeasibilityCostOrderingAndGap) {
  RngStream rng(4);
  const std::size_t m = 12;
  const Matrix c = pairing_cost(random_matrix(m, 2, rng), random_matrix(m, 2, rng));
  const double ot = ot_assignment(c).cost(c) / m;
  double prev = INFINITY;
  for (double eps : {2.0, 1.0, 0.5, 0.2, 0.1}) {
    const auto plan = sinkhorn(c, eps, 20000);
    const Matrix& p = *plan.plan;
    for (std::size_t i = 0; i < m; ++i) {
      double rs = 0, cs = 0;
      for (std::size_t j = 0; j < m; ++j) {
        EXPECT_GE(p(i, j), 0.0);
        rs += p(i, j);
        cs += p(j, i);
      }
      EXPECT_NEAR(rs, 1.0 / m, 1e-8);
      EXPECT_NEAR(cs, 1.0 / m, 1e-8);
    }
    const double cost = plan.cost(c);
    EXPECT_LT(cost, prev + 1e-12) << eps;
    EXPECT_GE(cost, ot - 1e-10);
    EXPECT_LE(cost - ot, eps * std::log(static_cast<double>(m)) + 1e-10) << eps;
    prev = cost;
  }
}

TEST(Sinkhorn, ReportsNonConvergence) {
  RngStream rng(5);
  const Matrix c = pairing_cost(random_matrix(10, 1, rng, 3.0), random_matrix(10, 1, rng));
  try {
    sinkhorn(c, 1e-3, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConvergence);
  }
}

TEST(PairMinibatch, AssignmentLowersTransportCost) {
  RngStream rng(6);
  for (auto kind : {CouplingKind::Assignment, CouplingKind::Entropic}) {
    const Matrix x1 = random_matrix(64, 2, rng, 2.0), x0 = random_matrix(64, 2, rng);
    const Matrix paired = pair_minibatch(x1, x0, kind, rng);
    double before = 0, after = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      before += squared_distance(x1.row(i), x0.row(i));
      after += squared_distance(x1.row(i), paired.row(i));
    }
    EXPECT_LT(after, 0.7 * before);
  }
}

TEST(Ode, ConstantFieldIsExact) {
  const VelocityFn c = [](double, std::span<const double>) { return Vector{0.5, -2.0}; };
  for (auto s : {Scheme::Euler, Scheme::Rk4})
    for (std::size_t k : {1u, 3u, 17u}) {
      const auto x = ode_integrate(c, Vector{1.0, 1.0}, {k, s, Direction::Forward});
      EXPECT_NEAR(x[0], 1.5, 1e-14);
      EXPECT_NEAR(x[1], -1.0, 1e-14);
    }
}

TEST(Ode, Rk4MatchesMatrixExponential) {
  const Matrix a{{-0.5, 1.0}, {-1.0, -0.3}};
  const Vector x0{1.0, 2.0};
  const Vector exact = matrix_exp(a, 1.0) * x0;
  const auto got = ode_integrate(linear_field(a), x0, {100, Scheme::Rk4, Direction::Forward});
  EXPECT_LT(std::sqrt(squared_distance(got, exact)) / norm2(exact), 1e-6);
}

TEST(Ode, ForwardThenReverseReturns) {
  const Matrix a{{0.3, 0.8}, {-0.6, 0.1}};
  const Vector x0{0.7, -1.3};
  const auto x1 = ode_integrate(linear_field(a), x0, {200, Scheme::Rk4, Direction::Forward});
  const auto back = ode_integrate(linear_field(a), x1, {200, Scheme::Rk4, Direction::Reverse});
  EXPECT_LT(std::sqrt(squared_distance(back, x0)), 1e-6);
  // Time-dependent nonlinear field.
  const VelocityFn v = [](double t, std::span<const double> x) {
    return Vector{std::sin(x[1]) + t, -0.5 * x[0] * std::cos(t)};
  };
  const auto y1 = ode_integrate(v, x0, {200, Scheme::Rk4, Direction::Forward});
  const auto y0 = ode_integrate(v, y1, {200, Scheme::Rk4, Direction::Reverse});
  EXPECT_LT(std::sqrt(squared_distance(y0, x0)), 1e-6);
}

TEST(Ode, ConvergenceOrders) {
  const Matrix a{{-0.5, 1.0}, {-1.0, -0.3}};
  const Vector x0{1.0, 2.0};
  const std::vector<double> ks{10, 20, 40, 80, 160};
  std::vector<double> eul, rk;
  for (double k : ks) {
    eul.push_back(endpoint_error(Scheme::Euler, static_cast<std::size_t>(k), a, x0));
    rk.push_back(endpoint_error(Scheme::Rk4, static_cast<std::size_t>(k), a, x0));
  }
  const double se = loglog_slope(ks, eul), sr = loglog_slope(ks, rk);
  EXPECT_GE(se, 0.7);
  EXPECT_LE(se, 1.3);
  EXPECT_GE(sr, 3.5);
}

TEST(Ode, TrajectoryRecordsGrid) {
  const auto tr = ode_trajectory(linear_field(Matrix{{1.0}}), Vector{1.0}, {4, Scheme::Euler, Direction::Reverse});
  ASSERT_EQ(tr.t.size(), 5u);
  EXPECT_EQ(tr.t.front(), 1.0);
  EXPECT_EQ(tr.t.back(), 0.0);
  EXPECT_NEAR(tr.x(4, 0), std::pow(0.75, 4), 1e-15);
}

TEST(Ode, NonFiniteStateAborts) {
  const VelocityFn blow = [](double, std::span<const double> x) { return Vector{x[0] * x[0] * 1e300}; };
  EXPECT_THROW(ode_integrate(blow, Vector{1e10}, {10, Scheme::Euler, Direction::Forward}), Error);
  EXPECT_THROW(ode_integrate(blow, Vector{1.0}, {0, Scheme::Euler, Direction::Forward}), Error);
}

TEST(LogDensity, LinearFieldCorrectionIsMinusTrace) {
  const Matrix a{{0.4, 1.0, 0.0}, {-0.2, -1.1, 0.3}, {0.5, 0.0, 0.25}};
  for (double t : {0.25, 1.0}) {
    // Integrating tA over [0, 1] is the time-t flow of A.
    const Matrix at = a * t;
    const auto r = logdensity_along_flow(linear_field(at), linear_divergence(at), Vector{1.0, 0.0, -1.0}, -2.0,
                                         {50, Scheme::Rk4, Direction::Forward});
    EXPECT_NEAR(r.log_density - (-2.0), -t * trace(a), 1e-8);
    const Vector x1 = matrix_exp(a, t) * Vector{1.0, 0.0, -1.0};
    EXPECT_LT(std::sqrt(squared_distance(r.x1, x1)), 1e-6);
  }
}

TEST(LogDensity, RotationAndScalarCases) {
  const Matrix rot{{0, 1}, {-1, 0}};
  const auto r = logdensity_along_flow(linear_field(rot), linear_divergence(rot), Vector{1.0, 1.0}, 0.3,
                                       {20, Scheme::Euler, Direction::Forward});
  EXPECT_EQ(r.log_density, 0.3);
  const Matrix one{{1.0}};
  const auto s = logdensity_along_flow(linear_field(one), linear_divergence(one), Vector{0.5}, 0.0,
                                       {7, Scheme::Euler, Direction::Forward});
  EXPECT_NEAR(s.log_density, -1.0, 1e-14);
}

TEST(LogDensity, HutchinsonAgreesWithExactOnAverage) {
  const Matrix a{{0.4, 1.0}, {-0.2, -1.1}};
  RngStream rng(7);
  const auto div = hutchinson_divergence_fn(linear_field(a), 64, rng);
  const auto r = logdensity_along_flow(linear_field(a), div, Vector{1.0, 1.0}, 0.0, {40, Scheme::Rk4, Direction::Forward});
  EXPECT_NEAR(r.log_density, -trace(a), 0.05);
}

TEST(LogDensity, MatchesPushforwardDensity) {
  // Nonlinear-in-time but linear-in-space field: density from the transported
  // Gaussian law must equal the ODE bookkeeping.
  const Matrix a{{-0.3, 0.7}, {0.2, 0.5}};
  const Vector mu0{0.5, -0.5};
  const Matrix s0{{1.0, 0.3}, {0.3, 0.8}};
  const Vector x0{0.2, 0.9};
  auto log_normal = [](std::span<const double> x, const Vector& m, const Matrix& s) {
    const auto f = cholesky(s);
    Vector r(x.begin(), x.end());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= m[i];
    const Vector z = solve_spd(f, r);
    return -0.5 * dot(r, z) - 0.5 * logdet_spd(f) - std::log(2 * std::numbers::pi);
  };
  const auto out = logdensity_along_flow(linear_field(a), linear_divergence(a), x0, log_normal(x0, mu0, s0),
                                         {100, Scheme::Rk4, Direction::Forward});
  const auto law = gaussian_pushforward(a, mu0, s0, 1.0);
  EXPECT_NEAR(out.log_density, log_normal(out.x1, law.mean, law.cov), 1e-8);
}

TEST(Pushforward, ClosedForms) {
  const auto z = gaussian_pushforward(Matrix(2, 2), Vector{1.0, 2.0}, Matrix{{2, 0.5}, {0.5, 1}}, 0.7);
  EXPECT_EQ(z.mean, (Vector{1.0, 2.0}));
  EXPECT_LT(frobenius(z.cov - Matrix{{2, 0.5}, {0.5, 1}}), 1e-15);
  const auto s = gaussian_pushforward(Matrix{{-1.0}}, Vector{1.0}, Matrix{{1.0}}, 1.0);
  EXPECT_NEAR(s.mean[0], std::exp(-1.0), 1e-12);
  EXPECT_NEAR(s.cov(0, 0), std::exp(-2.0), 1e-12);
  for (double t : {0.3, 1.0, 4.0}) {
    const auto r = gaussian_pushforward(Matrix{{0, 2}, {-2, 0}}, Vector{0.0, 0.0}, Matrix::identity(2), t);
    EXPECT_LT(frobenius(r.cov - Matrix::identity(2)), 1e-12);
  }
  EXPECT_THROW(gaussian_pushforward(Matrix(1, 1), Vector{0.0}, Matrix{{-1.0}}, 1.0), Error);
}

TEST(OuMoments, ClosedForms) {
  const auto a = ou_moments(Matrix(2, 2), Matrix::identity(2), Vector{0.0, 0.0}, Matrix(2, 2), 0.6, 10);
  EXPECT_LT(frobenius(a.cov - Matrix::identity(2) * 0.6), 1e-14);
  for (double t : {0.5, 1.0, 2.0}) {
    const auto b = ou_moments(Matrix{{-1.0}}, Matrix{{2.0}}, Vector{1.0}, Matrix{{0.0}}, t, 200);
    EXPECT_NEAR(b.cov(0, 0), 1 - std::exp(-2 * t), 1e-9);
    EXPECT_NEAR(b.mean[0], std::exp(-t), 1e-9);
  }
}

TEST(EulerMaruyama, ZeroAndBrownian) {
  RngStream rng(8);
  const VelocityFn zero = [](double, std::span<const double> x) { return Vector(x.size(), 0.0); };
  EXPECT_EQ(euler_maruyama(zero, [](double) { return 0.0; }, Vector{1.5, -2.0}, 10, rng), (Vector{1.5, -2.0}));
  Vector ends(10000);
  for (auto& e : ends) e = euler_maruyama(zero, [](double) { return 1.0; }, Vector{0.0}, 20, rng)[0];
  const auto [m, sd] = mean_sd(ends);
  EXPECT_NEAR(sd * sd, 1.0, 0.05);
  EXPECT_NEAR(m, 0.0, 0.05);
}

TEST(EulerMaruyama, OrnsteinUhlenbeckMatchesMomentOde) {
  const Matrix a{{-1.0, 0.5}, {0.0, -0.5}};
  const Matrix d{{0.5, 0.0}, {0.0, 1.0}};  // g g^T with g = diag(sqrt(0.5), 1)
  const auto law = ou_moments(a, d, Vector{1.0, -1.0}, Matrix(2, 2), 1.0, 100);
  // Independent noise per coordinate with different scales: simulate directly.
  RngStream rng(9);
  const std::size_t n = 10000, steps = 200;
  Matrix ends(n, 2);
  for (std::size_t p = 0; p < n; ++p) {
    Vector x{1.0, -1.0};
    const double dt = 1.0 / steps;
    for (std::size_t k = 0; k < steps; ++k) {
      const Vector dr = a * x;
      x[0] += dr[0] * dt + std::sqrt(0.5 * dt) * rng.normal();
      x[1] += dr[1] * dt + std::sqrt(dt) * rng.normal();
    }
    ends(p, 0) = x[0];
    ends(p, 1) = x[1];
  }
  const Matrix cov = kernels::serial::centered_covariance(ends);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(cov(i, i), law.cov(i, i), 0.05 * law.cov(i, i));
  EXPECT_NEAR(cov(0, 1), law.cov(0, 1), 0.05 * std::sqrt(law.cov(0, 0) * law.cov(1, 1)));
  // Scalar isotropic case through the library routine.
  const VelocityFn ou = [](double, std::span<const double> x) { return Vector{-x[0]}; };
  Vector e(n);
  for (auto& v : e) v = euler_maruyama(ou, [](double) { return std::sqrt(2.0); }, Vector{0.0}, 200, rng)[0];
  const double var = std::pow(mean_sd(e).second, 2);
  const auto scalar = ou_moments(Matrix{{-1.0}}, Matrix{{2.0}}, Vector{0.0}, Matrix{{0.0}}, 1.0, 100);
  EXPECT_NEAR(var, scalar.cov(0, 0), 0.05 * scalar.cov(0, 0));
}

TEST(MassTransport, KsDistanceToPushforwardLaw) {
  RngStream rng(10);
  const Matrix a{{0.8}};
  const std::size_t n = 10000;
  Vector pushed(n);
  for (auto& x : pushed) x = ode_integrate(linear_field(a), Vector{1.0 + 0.5 * rng.normal()}, {20, Scheme::Rk4})[0];
  const auto law = gaussian_pushforward(a, Vector{1.0}, Matrix{{0.25}}, 1.0);
  std::sort(pushed.begin(), pushed.end());
  double ks = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = normal_cdf((pushed[i] - law.mean[0]) / std::sqrt(law.cov(0, 0)));
    ks = std::max({ks, std::abs(f - double(i) / n), std::abs(f - double(i + 1) / n)});
  }
  EXPECT_LT(ks, 0.02);
}

TEST(ProbabilityFlow, Composition) {
  const VelocityFn f = [](double t, std::span<const double> x) { return Vector{t * x[0] + 1.0}; };
  const VelocityFn s = [](double, std::span<const double> x) { return Vector{-x[0]}; };
  EXPECT_EQ(probability_flow_velocity(f, 0.0, s)(0.3, Vector{2.0}), f(0.3, Vector{2.0}));
  const VelocityFn zero = [](double, std::span<const double> x) { return Vector(x.size(), 0.0); };
  const auto v = probability_flow_velocity(zero, std::sqrt(2.0), s);
  for (double x : {-1.5, 0.0, 2.0}) EXPECT_NEAR(v(0.0, Vector{x})[0], x, 1e-15);
  // Linear drift and score: matrix F - g^2/2 S.
  const Matrix fa{{0.1, 0.2}, {0.3, 0.4}}, sa{{-1.0, 0.5}, {0.5, -2.0}};
  const auto lin = probability_flow_velocity(linear_field(fa), 1.5, linear_field(sa));
  const Matrix expect = fa - sa * (1.5 * 1.5 / 2);
  const Vector x{0.7, -0.2};
  const Vector got = lin(0.0, x), want = expect * x;
  EXPECT_NEAR(got[0], want[0], 1e-14);
  EXPECT_NEAR(got[1], want[1], 1e-14);
}

TEST(ProbabilityFlow, OdeAndSdeMarginalsAgree) {
  RngStream rng(11);
  const std::size_t n = 10000;
  // Stationary OU: f = -x, g = sqrt 2, score of N(0,1) is -x, so v = 0.
  const VelocityFn ou = [](double, std::span<const double> x) { return Vector{-x[0]}; };
  const VelocityFn std_score = [](double, std::span<const double> x) { return Vector{-x[0]}; };
  const auto v = probability_flow_velocity(ou, std::sqrt(2.0), std_score);
  // Pure diffusion from N(0,1): f = 0, g = sqrt 2, score of N(0, 1 + 2t).
  const VelocityFn zero = [](double, std::span<const double> x) { return Vector{0.0 * x[0]}; };
  const VelocityFn heat_score = [](double t, std::span<const double> x) { return Vector{-x[0] / (1 + 2 * t)}; };
  const auto vh = probability_flow_velocity(zero, std::sqrt(2.0), heat_score);
  Vector ode_ou(n), sde_ou(n), ode_heat(n), sde_heat(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector x0{rng.normal()};
    ode_ou[i] = ode_integrate(v, x0, {10, Scheme::Rk4})[0];
    sde_ou[i] = euler_maruyama(ou, [](double) { return std::sqrt(2.0); }, x0, 100, rng)[0];
    ode_heat[i] = ode_integrate(vh, x0, {20, Scheme::Rk4})[0];
    sde_heat[i] = euler_maruyama(zero, [](double) { return std::sqrt(2.0); }, x0, 100, rng)[0];
  }
  // Sample variances have relative MC error about sqrt(2 / n) = 1.4%.
  for (const auto* s : {&ode_ou, &sde_ou}) {
    const auto [m, sd] = mean_sd(*s);
    EXPECT_NEAR(m, 0.0, 0.04);
    EXPECT_NEAR(sd * sd, 1.0, 0.06);
  }
  for (const auto* s : {&ode_heat, &sde_heat}) {
    const auto [m, sd] = mean_sd(*s);
    EXPECT_NEAR(m, 0.0, 0.07);
    EXPECT_NEAR(sd * sd, 3.0, 0.18);
  }
}

TEST(Sensitivity, LinearFlows) {
  RngStream rng(12);
  const VelocityFn zero = [](double, std::span<const double> x) { return Vector(x.size(), 0.0); };
  EXPECT_NEAR(sensitivity_ratio(zero, Vector{1.0, 2.0}, 1e-3, {10, Scheme::Rk4}, 5, rng), 1.0, 1e-12);
  for (double a : {-1.0, 0.5, 1.5}) {
    const VelocityFn lin = [a](double, std::span<const double> x) { return Vector{a * x[0]}; };
    EXPECT_NEAR(sensitivity_ratio(lin, Vector{0.3}, 1e-3, {50, Scheme::Rk4}, 3, rng), std::exp(a), 0.01 * std::exp(a));
  }
}

TEST(Sensitivity, ClampedNetworkRespectsExponentialBound) {
  RngStream rng(13);
  for (double cap : {0.6, 0.9, 1.2}) {
    nn::Mlp net({FlowModel::kTimeFeatures + 2, 32, 32, 2}, nn::Activation::Tanh, rng);
    for (std::size_t l = 0; l < net.num_layers(); ++l) net.weight(l) *= 3.0;
    nn::spectral_clamp_inplace(net, cap);
    const FlowModel model(net, 2, 0);
    const double lip = nn::lipschitz_upper_bound(model.net());
    EXPECT_LE(lip, std::pow(cap, 3) * (1 + 1e-6));
    for (int start = 0; start < 5; ++start) {
      const Vector x0{rng.normal(), rng.normal()};
      const double r = sensitivity_ratio(model.field(), x0, 1e-4, {50, Scheme::Rk4}, 8, rng);
      EXPECT_LE(r, std::exp(lip) * 1.05);
    }
  }
}

TEST(Cfm, ShiftedGaussianTarget) {
  RngStream rng(14);
  Matrix data(5000, 1);
  for (std::size_t i = 0; i < data.rows(); ++i) data(i, 0) = 2.0 + rng.normal();
  CfmConfig cfg;
  cfg.train.hidden = {32, 32};
  cfg.train.epochs = 30;
  cfg.train.batch_size = 128;
  cfg.train.step_size = 3e-3;
  cfg.train.cosine_schedule = true;
  const auto res = cfm_train(data, cfg, rng);
  EXPECT_LT(res.epoch_loss.back(), 0.5 * res.initial_loss);
  const Matrix gen = flow_generate(res.model, 5000, Matrix(), {100, Scheme::Rk4}, rng);
  const auto [m, sd] = mean_sd(gen.values());
  EXPECT_NEAR(m, 2.0, 0.1);
  EXPECT_NEAR(sd, 1.0, 0.1);
}

TEST(Cfm, IdentityTransport) {
  RngStream rng(15);
  Matrix data(5000, 1);
  for (std::size_t i = 0; i < data.rows(); ++i) data(i, 0) = rng.normal();
  CfmConfig cfg;
  cfg.train.hidden = {32, 32};
  cfg.train.epochs = 30;
  cfg.train.step_size = 3e-3;
  cfg.train.cosine_schedule = true;
  const auto res = cfm_train(data, cfg, rng);
  const Matrix gen = flow_generate(res.model, 5000, Matrix(), {50, Scheme::Rk4}, rng);
  Vector ref(5000);
  for (auto& r : ref) r = rng.normal();
  EXPECT_LT(w1_sorted(gen.values(), ref), 0.08);
}

TEST(Cfm, ForwardReverseOnTrainedField) {
  RngStream rng(16);
  Matrix data(2000, 2);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    data(i, 0) = 1.0 + 0.5 * rng.normal();
    data(i, 1) = data(i, 0) * 0.8 + 0.3 * rng.normal();
  }
  CfmConfig cfg;
  cfg.train.hidden = {32, 32};
  cfg.train.epochs = 10;
  const auto res = cfm_train(data, cfg, rng);
  const auto v = res.model.field();
  for (int k = 0; k < 5; ++k) {
    const Vector x0{rng.normal(), rng.normal()};
    const auto x1 = ode_integrate(v, x0, {200, Scheme::Rk4, Direction::Forward});
    const auto back = ode_integrate(v, x1, {200, Scheme::Rk4, Direction::Reverse});
    EXPECT_LT(std::sqrt(squared_distance(back, x0)), 1e-2);
  }
}

TEST(CouplingVariance, AssignmentReducesBinnedTeacherVariance) {
  // Two clusters at +-2; base N(0,1). Teacher signal u = x1 - x0 binned by (t, x_t).
  RngStream rng(17);
  const std::size_t batches = 400, m = 64;
  struct Acc {
    double n = 0, s = 0, ss = 0;
    double var() const { return ss / n - (s / n) * (s / n); }
  };
  std::map<std::pair<int, int>, Acc> ind, ot;
  for (std::size_t b = 0; b < batches; ++b) {
    Matrix x1(m, 1), x0(m, 1);
    for (std::size_t i = 0; i < m; ++i) {
      x1(i, 0) = (rng.uniform() < 0.5 ? -2.0 : 2.0) + 0.3 * rng.normal();
      x0(i, 0) = rng.normal();
    }
    for (auto [kind, acc] : {std::pair{CouplingKind::Independent, &ind}, std::pair{CouplingKind::Assignment, &ot}}) {
      const Matrix p = pair_minibatch(x1, x0, kind, rng);
      for (std::size_t i = 0; i < m; ++i) {
        const double t = rng.uniform();
        const auto s = linear_path(p.row(i), x1.row(i), t);
        const auto key = std::pair{static_cast<int>(t * 10), static_cast<int>(std::floor(s.xt[0] * 2))};
        auto& a = (*acc)[key];
        a.n += 1;
        a.s += s.u[0];
        a.ss += s.u[0] * s.u[0];
      }
    }
  }
  int occupied = 0, lower = 0;
  for (const auto& [key, a] : ind) {
    const auto it = ot.find(key);
    if (a.n < 20 || it == ot.end() || it->second.n < 20) continue;
    ++occupied;
    if (it->second.var() < a.var()) ++lower;
  }
  ASSERT_GT(occupied, 10);
  EXPECT_GE(lower, 0.7 * occupied);
}

TEST(ConditionalCfm, GaussianConditional) {
  RngStream rng(18);
  const std::size_t n = 4000;
  Matrix c(n, 1), y(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    c(i, 0) = rng.uniform(-1, 1);
    y(i, 0) = c(i, 0) + 0.5 * rng.normal();
  }
  CfmConfig cfg;
  cfg.train.hidden = {32, 32};
  cfg.train.epochs = 30;
  cfg.train.step_size = 3e-3;
  cfg.train.cosine_schedule = true;
  const auto res = conditional_cfm_train(c, y, cfg, rng);
  for (double cv : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    const Matrix gen = flow_generate(res.model, 2000, Matrix(2000, 1, cv), {50, Scheme::Rk4}, rng);
    EXPECT_NEAR(mean_sd(gen.values()).first, cv, 0.1) << cv;
  }
}

TEST(ConditionalCfm, DeterministicMapAndBimodalConditional) {
  RngStream rng(19);
  const std::size_t n = 4000;
  Matrix c(n, 1), y(n, 1), yb(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    c(i, 0) = rng.uniform(-1, 1);
    y(i, 0) = c(i, 0);
    const double w = 1 / (1 + std::exp(-2 * c(i, 0)));
    yb(i, 0) = (rng.uniform() < w ? 1.0 : -1.0) + 0.2 * rng.normal();
  }
  CfmConfig cfg;
  cfg.train.hidden = {32, 32};
  cfg.train.epochs = 60;
  cfg.train.step_size = 3e-3;
  cfg.train.cosine_schedule = true;
  const auto det = conditional_cfm_train(c, y, cfg, rng);
  for (double cv : {-0.8, 0.0, 0.6}) {
    const Matrix gen = flow_generate(det.model, 1000, Matrix(1000, 1, cv), {50, Scheme::Rk4}, rng);
    Vector err;
    for (double g : gen.values()) err.push_back(std::abs(g - cv));
    std::sort(err.begin(), err.end());
    // Base draws far in the tails are where a finite network is least accurate.
    EXPECT_LT(err[500], 0.1) << cv;
    EXPECT_LT(err[950], 0.1) << cv;
  }
  cfg.train.epochs = 30;
  const auto bi = conditional_cfm_train(c, yb, cfg, rng);
  const Matrix gen = flow_generate(bi.model, 2000, Matrix(2000, 1, 0.0), {50, Scheme::Rk4}, rng);
  double upper = 0;
  for (double g : gen.values()) upper += g > 0 ? 1.0 / 2000 : 0.0;
  EXPECT_GE(upper, 0.2);
  EXPECT_GE(1 - upper, 0.2);
}
