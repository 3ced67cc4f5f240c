#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fmstat/error.hpp"
#include "fmstat/inference.hpp"
#include "fmstat/linalg.hpp"

using namespace fmstat;
using namespace fmstat::inference;

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// x ~ N(0, I_2), e(x) = sigmoid(0.5 x1 - 0.5 x2), mu0 = x1 + 0.5 x2,
// tau(x) = 1 + 0.5 x1, unit-variance noise. ATE = 1.
double true_e(std::span<const double> x) { return sigmoid(0.5 * x[0] - 0.5 * x[1]); }
double true_mu0(std::span<const double> x) { return x[0] + 0.5 * x[1]; }
double true_tau(std::span<const double> x) { return 1.0 + 0.5 * x[0]; }
double true_mu1(std::span<const double> x) { return true_mu0(x) + true_tau(x); }

CausalData observational(std::size_t n, double noise, RngStream& rng) {
  CausalData d{Matrix(n, 2), Vector(n), Vector(n)};
  for (std::size_t i = 0; i < n; ++i) {
    auto x = d.x.row(i);
    x[0] = rng.normal();
    x[1] = rng.normal();
    d.a[i] = rng.bernoulli(true_e(x)) ? 1.0 : 0.0;
    d.y[i] = (d.a[i] == 1.0 ? true_mu1(x) : true_mu0(x)) + noise * rng.normal();
  }
  return d;
}

Nuisance truth_nuisance() { return Nuisance{true_mu0, true_mu1, true_e, 0.01}; }

double mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return s / v.size();
}

double se_of_mean(std::span<const double> v) {
  const double m = mean(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1) / v.size());
}

}  // namespace

TEST(FoldSplit, SizesAndPartition) {
  RngStream rng(1);
  auto sizes = [](const FoldPlan& p) {
    std::vector<std::size_t> s(p.k, 0);
    for (auto f : p.fold) ++s[f];
    return s;
  };
  EXPECT_EQ(sizes(fold_split(4, 2, rng)), (std::vector<std::size_t>{2, 2}));
  auto s5 = sizes(fold_split(5, 2, rng));
  std::sort(s5.begin(), s5.end());
  EXPECT_EQ(s5, (std::vector<std::size_t>{2, 3}));
  const FoldPlan p = fold_split(100, 5, rng);
  std::set<std::size_t> all;
  for (std::size_t f = 0; f < 5; ++f) {
    const auto m = p.members(f), c = p.complement(f);
    EXPECT_EQ(m.size(), 20u);
    EXPECT_EQ(m.size() + c.size(), 100u);
    for (auto i : m) EXPECT_TRUE(all.insert(i).second);
    for (auto i : c) EXPECT_NE(p.fold[i], f);
  }
  EXPECT_EQ(all.size(), 100u);
  EXPECT_THROW(fold_split(5, 1, rng), Error);
  EXPECT_THROW(fold_split(3, 4, rng), Error);
  try {
    fold_split(3, 4, rng);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadK);
  }
}

TEST(AipwScore, ArithmeticAndClipping) {
  const auto zero = [](std::span<const double>) { return 0.0; };
  const Nuisance half{zero, zero, [](std::span<const double>) { return 0.5; }, 0.01};
  const Vector x{0.0};
  EXPECT_DOUBLE_EQ(aipw_score(x, 1.0, 2.0, 0.0, half), 4.0);
  const Nuisance tiny{zero, zero, [](std::span<const double>) { return 1e-9; }, 0.01};
  EXPECT_NEAR(aipw_score(x, 1.0, 1.0, 0.0, tiny), 100.0, 1e-12);
  const Nuisance huge{zero, zero, [](std::span<const double>) { return 1.0; }, 0.01};
  EXPECT_NEAR(aipw_score(x, 0.0, 1.0, 0.0, huge), -100.0, 1e-12);
  EXPECT_EQ(huge.propensity(x), 0.99);
}

TEST(AipwScore, PerfectNuisancesNoiseless) {
  RngStream rng(2);
  const CausalData d = observational(200, 0.0, rng);
  const Nuisance nu = truth_nuisance();
  for (std::size_t i = 0; i < d.size(); ++i)
    EXPECT_NEAR(aipw_score(d.x.row(i), d.a[i], d.y[i], 0.3, nu), true_tau(d.x.row(i)) - 0.3, 1e-12);
}

TEST(AteCrossfit, PerfectStubIsExact) {
  // Constant effect so the pseudo-outcomes are all equal to tau.
  RngStream rng(3);
  CausalData d = observational(300, 0.0, rng);
  for (std::size_t i = 0; i < d.size(); ++i) d.y[i] = true_mu0(d.x.row(i)) + 2.5 * d.a[i];
  const auto mu1 = [](std::span<const double> x) { return true_mu0(x) + 2.5; };
  const AteReport r = ate_crossfit(d, 5, fixed_learner(Nuisance{true_mu0, mu1, true_e, 0.01}), 0.01, rng);
  EXPECT_NEAR(r.psi, 2.5, 1e-12);
  EXPECT_NEAR(r.se, 0.0, 1e-12);
  EXPECT_LE(r.lo, r.psi);
  EXPECT_GE(r.hi, r.psi);
  EXPECT_EQ(r.fold_means.size(), 5u);
  const std::string js = r.to_json();
  for (const char* key : {"\"psi_hat\"", "\"se\"", "\"ci95\"", "\"fold_means\""})
    EXPECT_NE(js.find(key), std::string::npos) << key;
}

TEST(AteCrossfit, PsiIsMeanOfFoldScoresAndLearnerSeesOnlyComplement) {
  RngStream rng(4);
  const CausalData d = observational(50, 1.0, rng);
  std::vector<std::size_t> seen_sizes;
  NuisanceLearner spy = [&](const CausalData& train, RngStream& r) {
#pragma omp critical
    seen_sizes.push_back(train.size());
    return linear_learner()(train, r);
  };
  RngStream r1(9), r2(9);
  const AteReport rep = ate_crossfit(d, 5, spy, 0.01, r1);
  for (auto s : seen_sizes) EXPECT_EQ(s, 40u);
  // Weighted fold means equal the pooled mean; CI is symmetric at 1.96 SE.
  const FoldPlan plan = fold_split(50, 5, r2);
  double pooled = 0;
  for (std::size_t f = 0; f < 5; ++f) pooled += rep.fold_means[f] * plan.members(f).size() / 50.0;
  EXPECT_NEAR(rep.psi, pooled, 1e-12);
  EXPECT_NEAR(rep.hi - rep.psi, 1.96 * rep.se, 1e-12);
  EXPECT_NEAR(rep.psi - rep.lo, 1.96 * rep.se, 1e-12);
}

TEST(AteCrossfit, ArmMissing) {
  RngStream rng(5);
  CausalData d = observational(20, 1.0, rng);
  std::fill(d.a.begin(), d.a.end(), 1.0);
  d.a[0] = 0.0;  // the fold containing row 0 leaves a treated-only complement
  try {
    ate_crossfit(d, 4, linear_learner(), 0.01, rng);
    FAIL() << "expected ArmMissing";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ArmMissing);
  }
}

TEST(AteCrossfit, RandomizedDesignCoverage) {
  // Randomised e = 0.5, constant effect tau = 1.5, linear outcome.
  RngStream rng(6);
  int covered = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    RngStream rr = rng.child(r);
    CausalData d{Matrix(400, 2), Vector(400), Vector(400)};
    for (std::size_t i = 0; i < 400; ++i) {
      d.x(i, 0) = rr.normal();
      d.x(i, 1) = rr.normal();
      d.a[i] = rr.bernoulli(0.5) ? 1.0 : 0.0;
      d.y[i] = 0.8 * d.x(i, 0) - 0.4 * d.x(i, 1) + 1.5 * d.a[i] + rr.normal();
    }
    const AteReport rep = ate_crossfit(d, 5, linear_learner(), 0.01, rr);
    if (rep.lo <= 1.5 && 1.5 <= rep.hi) ++covered;
    if (r == 0) EXPECT_LT(std::abs(rep.psi - 1.5), 3 * rep.se);
  }
  const double cov = covered / double(reps);
  EXPECT_GE(cov, 0.90);
  EXPECT_LE(cov, 0.985);
}

TEST(AteCrossfit, DoubleRobustness) {
  RngStream rng(7);
  const CausalData d = observational(4000, 1.0, rng);
  // Outcome model wrong (mu = 0), propensity right.
  const AteReport mu_wrong = ate_crossfit(d, 5, linear_learner(OutcomeModel::Zero, PropensityModel::Logistic), 0.01, rng);
  EXPECT_LT(std::abs(mu_wrong.psi - 1.0), 3 * mu_wrong.se);
  // Propensity wrong (constant), outcome right.
  const AteReport e_wrong = ate_crossfit(d, 5, linear_learner(OutcomeModel::Linear, PropensityModel::Constant), 0.01, rng);
  EXPECT_LT(std::abs(e_wrong.psi - 1.0), 3 * e_wrong.se);
  // Both wrong is visibly biased: the difference of raw arm means.
  const AteReport both = ate_crossfit(d, 5, linear_learner(OutcomeModel::Zero, PropensityModel::Constant), 0.01, rng);
  EXPECT_GT(std::abs(both.psi - 1.0), 3 * both.se);
}

TEST(CatePseudoOutcomes, PerfectNoiselessBothArms) {
  RngStream rng(8);
  CausalData d = observational(100, 0.0, rng);
  Nuisance nu = truth_nuisance();
  nu.e = [](std::span<const double>) { return 0.5; };
  const Vector yt = cate_pseudo_outcomes(d, nu);
  bool saw0 = false, saw1 = false;
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_NEAR(yt[i], true_tau(d.x.row(i)), 1e-12);
    (d.a[i] == 1.0 ? saw1 : saw0) = true;
  }
  EXPECT_TRUE(saw0 && saw1);
}

TEST(CatePseudoOutcomes, DoubleRobustMeans) {
  RngStream rng(9);
  const CausalData d = observational(20000, 1.0, rng);
  const auto zero = [](std::span<const double>) { return 0.0; };
  const auto half = [](std::span<const double>) { return 0.5; };
  // E tau(X) = 1.
  for (const Nuisance& nu : {Nuisance{zero, zero, true_e, 0.01}, Nuisance{true_mu0, true_mu1, half, 0.01}}) {
    const Vector yt = cate_pseudo_outcomes(d, nu);
    EXPECT_LT(std::abs(mean(yt) - 1.0), 3 * se_of_mean(yt));
  }
  // Second stage: regressing the pseudo-outcome on [1, x] recovers tau = 1 + 0.5 x1.
  const Vector coef = least_squares(with_intercept(d.x), cate_pseudo_outcomes(d, truth_nuisance()));
  EXPECT_NEAR(coef[0], 1.0, 0.06);
  EXPECT_NEAR(coef[1], 0.5, 0.06);
  EXPECT_NEAR(coef[2], 0.0, 0.06);
}

TEST(IpwMeans, RandomizedAndConventions) {
  RngStream rng(10);
  const std::size_t n = 20000;
  CausalData d{Matrix(n, 1), Vector(n), Vector(n)};
  Vector y1, y0;
  for (std::size_t i = 0; i < n; ++i) {
    d.a[i] = i % 2 == 0 ? 1.0 : 0.0;
    d.y[i] = d.a[i] == 1.0 ? 3.0 + rng.normal() : -1.0 + rng.normal();
    (d.a[i] == 1.0 ? y1 : y0).push_back(d.y[i]);
  }
  const auto half = [](std::span<const double>) { return 0.5; };
  auto [m1, m0] = ipw_means(d, half);
  // Balanced arms with e = 0.5 make the IPW means the arm means exactly.
  EXPECT_NEAR(m1, mean(y1), 1e-12);
  EXPECT_NEAR(m0, mean(y0), 1e-12);
  // All treated: the control sum is empty.
  std::fill(d.a.begin(), d.a.end(), 1.0);
  auto [t1, t0] = ipw_means(d, [](std::span<const double>) { return 0.99; });
  EXPECT_EQ(t0, 0.0);
  EXPECT_GT(t1, 0.0);
  // Constant outcome with the correct propensity.
  const CausalData obs = observational(20000, 0.0, rng);
  CausalData c = obs;
  std::fill(c.y.begin(), c.y.end(), 2.0);
  auto [c1, c0] = ipw_means(c, true_e);
  EXPECT_NEAR(c1, 2.0, 0.1);
  EXPECT_NEAR(c0, 2.0, 0.1);
}

TEST(GFormula, ConstantAndCrossCheck) {
  RngStream rng(11);
  const CausalData d = observational(20000, 1.0, rng);
  EXPECT_NEAR(gformula_mean(d, [](std::span<const double>) { return 4.2; }), 4.2, 1e-10);
  // E Y(1) = E[1.5 x1 + 0.5 x2 + 1] = 1, E Y(0) = 0.
  Vector g1(d.size()), g0(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    g1[i] = true_mu1(d.x.row(i));
    g0[i] = true_mu0(d.x.row(i));
  }
  EXPECT_NEAR(gformula_mean(d, true_mu1), mean(g1), 1e-12);
  EXPECT_LT(std::abs(gformula_mean(d, true_mu1) - 1.0), 3 * se_of_mean(g1));
  EXPECT_LT(std::abs(gformula_mean(d, true_mu0)), 3 * se_of_mean(g0));
  // IPW agrees with the g-formula when both nuisances are right.
  const auto [m1, m0] = ipw_means(d, true_e);
  Vector w1(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) w1[i] = d.a[i] * d.y[i] / true_e(d.x.row(i));
  EXPECT_NEAR(m1, mean(w1), 1e-12);
  EXPECT_LT(std::abs(m1 - gformula_mean(d, true_mu1)), 3 * se_of_mean(w1));
  EXPECT_LT(std::abs(m0 - gformula_mean(d, true_mu0)), 0.1);
}

TEST(LogisticFit, RecoversCoefficients) {
  RngStream rng(12);
  const std::size_t n = 20000;
  Matrix x(n, 2);
  Vector a(n);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    a[i] = rng.bernoulli(sigmoid(-0.3 + 0.9 * x(i, 0) - 0.7 * x(i, 1))) ? 1.0 : 0.0;
  }
  const Vector b = logistic_fit(with_intercept(x), a);
  EXPECT_NEAR(b[0], -0.3, 0.06);
  EXPECT_NEAR(b[1], 0.9, 0.06);
  EXPECT_NEAR(b[2], -0.7, 0.06);
}

TEST(EffCoef, GaussianTwoPointAndExponential) {
  const EffScoreCoef g = eff_coef_from_moments(0.0, 3.0);
  EXPECT_DOUBLE_EQ(g.b, -1.0);
  EXPECT_DOUBLE_EQ(g.c, 0.0);
  EXPECT_DOUBLE_EQ(g.project(0.7), -0.7);
  try {
    residual_eff_coeffs(Vector{-1, 1, -1, 1});
    FAIL() << "expected DegenerateMoments";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateMoments);
  }
  RngStream rng(13);
  Vector gauss(100000), expo(100000);
  for (auto& v : gauss) v = 2.0 * rng.normal() + 0.3;
  for (auto& v : expo) v = rng.exponential() - 1.0;
  const EffScoreCoef eg = residual_eff_coeffs(gauss);
  EXPECT_NEAR(eg.b, -1.0, 0.05);
  EXPECT_NEAR(eg.c, 0.0, 0.05);
  const EffScoreCoef ee = residual_eff_coeffs(expo);
  EXPECT_NEAR(ee.c, 0.5, 0.05);
  EXPECT_NEAR(ee.b, -2.0, 0.05);
  // Normal equations of the projection: E[s(e) e] = -1, E[s(e)(e^2 - 1)] = 0
  // (integration by parts against the density).
  const EffScoreCoef ex = eff_coef_from_moments(2.0, 9.0);
  double r1 = 0, r2 = 0;
  for (double z : expo) {
    r1 += ex.project(z) * z / expo.size();
    r2 += ex.project(z) * (z * z - 1) / expo.size();
  }
  EXPECT_NEAR(r1, -1.0, 0.1);
  EXPECT_NEAR(r2, 0.0, 0.3);
}

TEST(EfficientScores, GaussianZeroResidualAndUnbiased) {
  const EffScoreCoef g = eff_coef_from_moments(0.0, 3.0);
  const Vector x{1.0, 2.0}, beta{0.5, -0.25};
  const double sigma2 = 4.0, y = 3.0;
  const auto s = efficient_scores_linreg(x, y, beta, sigma2, g);
  const double e = (y - dot(x, beta)) / 2.0;
  EXPECT_NEAR(s.psi_beta[0], x[0] * e / 2.0, 1e-15);
  EXPECT_NEAR(s.psi_beta[1], x[1] * e / 2.0, 1e-15);
  const auto z = efficient_scores_linreg(x, dot(x, beta), beta, sigma2, g);
  EXPECT_EQ(z.psi_beta[0], 0.0);
  EXPECT_EQ(z.psi_beta[1], 0.0);
  EXPECT_DOUBLE_EQ(z.psi_sigma2, -1.0 / 8.0);
  // With skewed coefficients s(0) = -c, so only the scale score keeps its value.
  const auto zs = efficient_scores_linreg(x, dot(x, beta), beta, sigma2, eff_coef_from_moments(2.0, 9.0));
  EXPECT_NEAR(zs.psi_beta[1], x[1] * 0.5 / 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(zs.psi_sigma2, -1.0 / 8.0);
  // Mean zero at the truth with skewed errors.
  RngStream rng(14);
  const EffScoreCoef ex = eff_coef_from_moments(2.0, 9.0);
  const std::size_t n = 50000;
  Vector sb0(n), sb1(n), ss(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector xi{1.0, rng.normal()};
    const double yi = dot(xi, beta) + 2.0 * (rng.exponential() - 1.0);
    const auto sc = efficient_scores_linreg(xi, yi, beta, sigma2, ex);
    sb0[i] = sc.psi_beta[0];
    sb1[i] = sc.psi_beta[1];
    ss[i] = sc.psi_sigma2;
  }
  EXPECT_LT(std::abs(mean(sb0)), 3 * se_of_mean(sb0));
  EXPECT_LT(std::abs(mean(sb1)), 3 * se_of_mean(sb1));
  EXPECT_LT(std::abs(mean(ss)), 3 * se_of_mean(ss));
}

namespace {

struct LinData {
  Matrix x;
  Vector y;
};

LinData linear_data(std::size_t n, bool skewed, double noise, RngStream& rng) {
  LinData d{Matrix(n, 3), Vector(n)};
  const Vector beta{1.0, 2.0, -1.0};
  for (std::size_t i = 0; i < n; ++i) {
    d.x(i, 0) = 1.0;
    d.x(i, 1) = rng.normal();
    d.x(i, 2) = rng.uniform(-1, 1);
    const double err = skewed ? rng.exponential() - 1.0 : rng.normal();
    d.y[i] = dot(d.x.row(i), beta) + noise * err;
  }
  return d;
}

}  // namespace

TEST(SemiparamLinreg, FixedGaussianMomentsReproduceOls) {
  RngStream rng(15);
  const LinData d = linear_data(500, true, 0.7, rng);
  SemiparamConfig cfg;
  cfg.fixed_moments = std::make_pair(0.0, 3.0);
  const SemiparamFit fit = semiparam_linreg_fit(d.x, d.y, 5, cfg, rng);
  const Vector ols = least_squares(d.x, d.y);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(fit.beta[j], ols[j], 1e-6);
  double rss = 0;
  for (std::size_t i = 0; i < 500; ++i) rss += std::pow(d.y[i] - dot(d.x.row(i), ols), 2);
  EXPECT_NEAR(fit.sigma2, rss / 500, 1e-8);
}

TEST(SemiparamLinreg, SolvesEstimatingEquations) {
  // With the same coefficients in every fold the pooled equations are the
  // plain sample means of the efficient scores.
  RngStream rng(16);
  const LinData d = linear_data(800, false, 1.0, rng);
  SemiparamConfig cfg;
  cfg.fixed_moments = std::make_pair(0.5, 4.0);
  const SemiparamFit fit = semiparam_linreg_fit(d.x, d.y, 4, cfg, rng);
  EXPECT_FALSE(fit.scale_fallback);
  const EffScoreCoef c = eff_coef_from_moments(0.5, 4.0);
  Vector m(4, 0.0);
  for (std::size_t i = 0; i < 800; ++i) {
    const auto s = efficient_scores_linreg(d.x.row(i), d.y[i], fit.beta, fit.sigma2, c);
    for (std::size_t j = 0; j < 3; ++j) m[j] += s.psi_beta[j] / 800;
    m[3] += s.psi_sigma2 / 800;
  }
  for (double v : m) EXPECT_NEAR(v, 0.0, 1e-9);
  for (double se : fit.se_beta) EXPECT_GT(se, 0.0);
}

TEST(SemiparamLinreg, GaussianCloseToOls) {
  RngStream rng(17);
  const LinData d = linear_data(1000, false, 1.0, rng);
  const SemiparamFit fit = semiparam_linreg_fit(d.x, d.y, 5, SemiparamConfig{}, rng);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_LT(std::abs(fit.beta[j] - fit.ols_beta[j]), 3 * fit.se_beta[j]);
    // Sandwich SE is near the OLS SE for Gaussian errors.
    EXPECT_GT(fit.se_beta[j], 0.0);
  }
  for (const auto& c : fit.fold_coef) {
    EXPECT_NEAR(c.b, -1.0, 0.3);
    EXPECT_NEAR(c.c, 0.0, 0.2);
  }
}

TEST(SemiparamLinreg, SkewedErrorsNoWorseThanOls) {
  RngStream rng(18);
  const Vector beta{1.0, 2.0, -1.0};
  double mse_sp = 0, mse_ols = 0;
  for (int r = 0; r < 200; ++r) {
    RngStream rr = rng.child(r);
    const LinData d = linear_data(300, true, 1.0, rr);
    const SemiparamFit fit = semiparam_linreg_fit(d.x, d.y, 5, SemiparamConfig{}, rr);
    for (std::size_t j = 0; j < 3; ++j) {
      mse_sp += std::pow(fit.beta[j] - beta[j], 2);
      mse_ols += std::pow(fit.ols_beta[j] - beta[j], 2);
    }
  }
  EXPECT_LE(mse_sp, mse_ols);
}

TEST(SemiparamLinreg, NoiselessAndSingular) {
  RngStream rng(19);
  const LinData d = linear_data(50, false, 0.0, rng);
  const SemiparamFit fit = semiparam_linreg_fit(d.x, d.y, 5, SemiparamConfig{}, rng);
  EXPECT_NEAR(fit.beta[0], 1.0, 1e-12);
  EXPECT_NEAR(fit.beta[1], 2.0, 1e-12);
  EXPECT_NEAR(fit.beta[2], -1.0, 1e-12);
  Matrix dup(50, 2);
  for (std::size_t i = 0; i < 50; ++i) dup(i, 0) = dup(i, 1) = 1.0;
  try {
    semiparam_linreg_fit(dup, d.y, 5, SemiparamConfig{}, rng);
    FAIL() << "expected SingularDesign";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularDesign);
  }
}

TEST(Orthogonality, RecoversPolynomialAndValidatesGrid) {
  const Vector grid{-0.1, -0.05, 0.0, 0.05, 0.1};
  const auto s = orthogonality_fd_check([](double e) { return 0.3 - 2.0 * e + 5.0 * e * e; }, grid);
  EXPECT_NEAR(s.linear, -2.0, 1e-10);
  EXPECT_NEAR(s.quadratic, 5.0, 1e-8);
  const auto flat = orthogonality_fd_check([](double) { return 1.0; }, grid);
  EXPECT_NEAR(flat.linear, 0.0, 1e-12);
  EXPECT_THROW(orthogonality_fd_check([](double e) { return e; }, Vector{-0.1, 0.0, 0.2}), Error);
}

TEST(Orthogonality, AipwAgainstNaiveInFourDirections) {
  RngStream rng(20);
  const CausalData d = observational(20000, 1.0, rng);
  const Vector grid{-0.1, -0.05, 0.0, 0.05, 0.1};
  const Nuisance base = truth_nuisance();
  const double psi = 1.0;
  const auto h = [](std::span<const double> x) { return 1.0 + x[0]; };
  const auto he = [](std::span<const double> x) { return 0.2 * std::tanh(x[1]); };
  struct Dir {
    const char* name;
    bool outcome;
    std::function<Nuisance(double)> perturb;
  };
  const std::vector<Dir> dirs{
      {"mu1", true, [&](double e) { Nuisance n = base; n.mu1 = [=](auto x) { return true_mu1(x) + e * h(x); }; return n; }},
      {"mu0", true, [&](double e) { Nuisance n = base; n.mu0 = [=](auto x) { return true_mu0(x) + e * h(x); }; return n; }},
      {"e+", false, [&](double e) { Nuisance n = base; n.e = [=](auto x) { return true_e(x) + e * he(x); }; return n; }},
      {"e-", false, [&](double e) { Nuisance n = base; n.e = [=](auto x) { return true_e(x) - e * std::abs(he(x)); }; return n; }},
  };
  for (const auto& dir : dirs) {
    const auto aipw = orthogonality_fd_check([&](double e) { return aipw_mean_moment(d, psi, dir.perturb(e)); }, grid);
    const auto naive = orthogonality_fd_check(
        [&](double e) {
          const Nuisance n = dir.perturb(e);
          return dir.outcome ? gformula_moment(d, psi, n) : ipw_moment(d, psi, n);
        },
        grid);
    EXPECT_GE(std::abs(naive.linear), 10 * std::abs(aipw.linear)) << dir.name;
  }
}
