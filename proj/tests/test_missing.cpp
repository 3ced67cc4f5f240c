#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fmstat/error.hpp"
#include "fmstat/missing.hpp"

using namespace fmstat;
using namespace fmstat::missing;

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Matrix gaussian_x3(std::size_t n, RngStream& rng, double noise) {
  Matrix x(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    x(i, 2) = 0.6 * x(i, 0) + 0.6 * x(i, 1) + noise * rng.normal();
  }
  return x;
}

double corr(std::span<const double> a, std::span<const double> b) {
  const double n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

ImputerConfig quick_imputer(std::size_t epochs) {
  ImputerConfig cfg;
  cfg.cfm.train.hidden = {48, 48};
  cfg.cfm.train.epochs = epochs;
  cfg.ode.steps = 40;
  return cfg;
}

}  // namespace

TEST(MarMask, RatesAndBadColumns) {
  RngStream rng(1);
  const Matrix x = gaussian_x3(20000, rng, 0.5);
  const Vector zero{0.0, 0.0, 0.0};
  const MaskedDataset half = mar_mask(x, 2, zero, 0.0, rng);
  const double rate = half.missing_count(2) / 20000.0;
  EXPECT_LT(std::abs(rate - 0.5), 2 * std::sqrt(0.25 / 20000));
  EXPECT_EQ(half.missing_count(0), 0u);
  EXPECT_EQ(half.missing_count(1), 0u);
  EXPECT_LT(mar_mask(x, 2, zero, -10.0, rng).missing_count(2), 10u);
  const Vector w{0.8, -0.6, 0.0};
  const double w0 = mar_intercept_for_rate(x, w, 0.359);
  EXPECT_NEAR(mar_mask(x, 2, w, w0, rng).missing_count(2) / 20000.0, 0.359, 0.03);
  for (const Vector& bad : {Vector{0.0, 0.0, 1.0}, Vector{1.0, 0.0}}) {
    try {
      mar_mask(x, 2, bad, 0.0, rng);
      FAIL() << "expected BadColumns";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BadColumns);
    }
  }
  EXPECT_THROW(mar_mask(x, 3, zero, 0.0, rng), Error);
}

TEST(MarMask, NeverReadsTheMaskedColumn) {
  // Poison the target column: the mask must be identical to the clean run
  // and the masked cells carry NaN.
  RngStream a(2), b(2), g(3);
  Matrix x = gaussian_x3(500, g, 0.5);
  Matrix poisoned = x;
  for (std::size_t i = 0; i < 500; ++i) poisoned(i, 2) = std::numeric_limits<double>::quiet_NaN();
  const Vector w{1.0, 0.5, 0.0};
  const MaskedDataset clean = mar_mask(x, 2, w, -0.5, a);
  const MaskedDataset pois = mar_mask(poisoned, 2, w, -0.5, b);
  EXPECT_EQ(clean.m.values(), pois.m.values());
  for (std::size_t i = 0; i < 500; ++i)
    if (clean.missing(i, 2)) EXPECT_TRUE(std::isnan(clean.x(i, 2)));
  EXPECT_NO_THROW(clean.validate());
  // Poisoning a weighted column is refused.
  Matrix bad = x;
  bad(7, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(mar_mask(bad, 2, w, 0.0, a), Error);
}

TEST(ChainedImpute, GaussianCorrelationAndNoMissing) {
  RngStream rng(4);
  const Matrix x = gaussian_x3(6000, rng, 0.5);
  const MaskedDataset md = mar_mask(x, 2, Vector{0, 0, 0}, 0.0, rng);
  const Matrix done = chained_gaussian_impute(md, 5, rng);
  Vector truth, imp;
  for (auto i : md.missing_rows(2)) {
    truth.push_back(x(i, 2));
    imp.push_back(done(i, 2));
  }
  // Two independent draws from the same conditional law correlate at R^2.
  const double r2 = 0.72 / 0.97;
  EXPECT_NEAR(corr(truth, imp), r2, 0.1);
  for (auto i : md.observed_rows(2)) EXPECT_EQ(done(i, 2), x(i, 2));
  const MaskedDataset full = MaskedDataset::complete(x);
  EXPECT_EQ(chained_gaussian_impute(full, 3, rng).values(), x.values());
  // Fewer than 50 observed rows.
  const MaskedDataset sparse = mar_mask(Matrix(x), 2, Vector{0, 0, 0}, 5.0, rng);
  EXPECT_THROW(chained_gaussian_impute(sparse, 1, rng), Error);
}

TEST(FlowImputer, GaussianConditionalMean) {
  RngStream rng(5);
  const Matrix x = gaussian_x3(3000, rng, 0.5);
  const MaskedDataset md = mar_mask(x, 2, Vector{0.5, 0.0, 0.0}, -0.5, rng);
  const FlowImputer imp = fm_imputer_train(md, 2, quick_imputer(60), rng);
  EXPECT_EQ(imp.predictors, (std::vector<std::size_t>{0, 1}));
  for (double a : {-1.0, 0.0, 1.0})
    for (double b : {-1.0, 0.0, 1.0}) {
      Matrix cond(800, 2);
      for (std::size_t i = 0; i < 800; ++i) {
        cond(i, 0) = a;
        cond(i, 1) = b;
      }
      const Vector draws = imp.sample(cond, rng);
      double m = 0;
      for (double v : draws) m += v / draws.size();
      EXPECT_NEAR(m, 0.6 * a + 0.6 * b, 0.15) << a << "," << b;
    }
  const Matrix filled = fm_impute(md, imp, rng);
  for (std::size_t i = 0; i < 3000; ++i) EXPECT_TRUE(std::isfinite(filled(i, 2)));
}

TEST(FlowImputer, DeterministicTarget) {
  RngStream rng(6);
  Matrix x(3000, 2);
  for (std::size_t i = 0; i < 3000; ++i) x(i, 0) = x(i, 1) = rng.normal();
  const MaskedDataset md = mar_mask(x, 1, Vector{0.0, 0.0}, -0.5, rng);
  const FlowImputer imp = fm_imputer_train(md, 1, quick_imputer(150), rng);
  const Matrix filled = fm_impute(md, imp, rng);
  Vector err;
  for (auto i : md.missing_rows(1)) err.push_back(std::abs(filled(i, 1) - x(i, 0)));
  std::sort(err.begin(), err.end());
  EXPECT_LT(err[err.size() / 2], 0.1);
  EXPECT_LT(err[err.size() * 95 / 100], 0.1);
}

TEST(FlowImputer, BimodalMassInBothModes) {
  // X3 = s (1.2 + 0.3 X2) + 0.35 xi with P(s = 1) = sigmoid(1.5 X1).
  RngStream rng(7);
  const std::size_t n = 3000;
  Matrix x(n, 3);
  Vector pi(n);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    pi[i] = sigmoid(1.5 * x(i, 0));
    const double s = rng.bernoulli(pi[i]) ? 1.0 : -1.0;
    x(i, 2) = s * (1.2 + 0.3 * x(i, 1)) + 0.35 * rng.normal();
  }
  const MaskedDataset md = mar_mask(x, 2, Vector{0.6, -0.4, 0.0}, -0.6, rng);
  const FlowImputer imp = fm_imputer_train(md, 2, quick_imputer(80), rng);
  std::size_t up = 0, down = 0, total = 0;
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix filled = fm_impute(md, imp, rng);
    for (auto i : md.missing_rows(2)) {
      if (pi[i] < 0.35 || pi[i] > 0.65) continue;
      ++total;
      if (filled(i, 2) > 0.5) ++up;
      if (filled(i, 2) < -0.5) ++down;
    }
  }
  ASSERT_GT(total, 100u);
  EXPECT_GE(up / double(total), 0.2);
  EXPECT_GE(down / double(total), 0.2);
}

TEST(FlowImputer, TooFewComplete) {
  RngStream rng(8);
  const Matrix x = gaussian_x3(200, rng, 0.5);
  const MaskedDataset md = mar_mask(x, 2, Vector{0, 0, 0}, 3.0, rng);
  try {
    fm_imputer_train(md, 2, quick_imputer(1), rng);
    FAIL() << "expected TooFewComplete";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewComplete);
  }
}

TEST(Rubin, WorkedExampleAndIdentical) {
  const std::vector<Vector> est{{1.0}, {3.0}};
  const std::vector<Matrix> var{Matrix{{1.0}}, Matrix{{1.0}}};
  const RubinResult r = rubin_combine(est, var);
  EXPECT_NEAR(r.theta[0], 2.0, 1e-12);
  EXPECT_NEAR(r.v_bar(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.b(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(r.t(0, 0), 4.0, 1e-12);
  const std::vector<Vector> same{{0.5, -1.0}, {0.5, -1.0}, {0.5, -1.0}};
  const Matrix v{{2.0, 0.3}, {0.3, 1.0}};
  const std::vector<Matrix> vs{v, v, v};
  const RubinResult s = rubin_combine(same, vs);
  EXPECT_EQ(max_abs(s.b), 0.0);
  EXPECT_LT(max_abs(s.t - v), 1e-15);
  try {
    rubin_combine(std::vector<Vector>{{1.0}}, std::vector<Matrix>{Matrix{{1.0}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewImputations);
  }
}

TEST(Rubin, BetweenVarianceMatchesPairwiseForm) {
  // B equals the average over pairs of (a - b)(a - b)^T / 2, an algebraically
  // independent form of the sample covariance.
  RngStream rng(9);
  const std::size_t k = 7, p = 3;
  std::vector<Vector> est(k, Vector(p));
  std::vector<Matrix> var(k, Matrix(p, p));
  for (auto& e : est)
    for (auto& v : e) v = rng.normal();
  for (auto& m : var)
    for (std::size_t a = 0; a < p; ++a) m(a, a) = rng.uniform(0.5, 2);
  const RubinResult r = rubin_combine(est, var);
  Matrix pair(p, p);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b)
          pair(a, b) += (est[i][a] - est[j][a]) * (est[i][b] - est[j][b]) / (2.0 * k * (k - 1));
  EXPECT_LT(max_abs(r.b - pair), 1e-12);
  EXPECT_LT(max_asymmetry(r.b), 1e-12);
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < p; ++b)
      EXPECT_NEAR(r.t(a, b), r.v_bar(a, b) + (1.0 + 1.0 / k) * r.b(a, b), 1e-12);
}

TEST(MiPipeline, NoMissingnessIsSingleAnalysis) {
  RngStream rng(10);
  const Matrix x = gaussian_x3(300, rng, 0.5);
  const Analysis ana = ols_analysis(2, false);
  const auto [theta, v] = ana(x);
  const MiResult r = mi_pipeline(MaskedDataset::complete(x), MiConfig{}, ana, rng);
  EXPECT_EQ(r.rubin.theta, theta);
  EXPECT_EQ(max_abs(r.rubin.b), 0.0);
  EXPECT_LT(max_abs(r.rubin.t - v), 1e-15);
  EXPECT_NEAR(theta[1], 0.6, 0.1);
}

TEST(MiPipeline, ChainedEngineCoversTruth) {
  RngStream rng(11);
  const Matrix x = gaussian_x3(2000, rng, 0.5);
  const MaskedDataset md = mar_mask(x, 2, Vector{0.8, 0.0, 0.0}, -0.5, rng);
  MiConfig cfg;
  cfg.engine = Engine::Chained;
  cfg.imputations = 10;
  const MiResult r = mi_pipeline(md, cfg, ols_analysis(2, false), rng);
  ASSERT_EQ(r.completed.size(), 10u);
  for (std::size_t j = 1; j < 3; ++j) EXPECT_LT(std::abs(r.rubin.theta[j] - 0.6), 3 * std::sqrt(r.rubin.t(j, j)));
  EXPECT_GT(r.rubin.b(1, 1), 0.0);
  EXPECT_EQ(to_string(engine_from_string("chained")), "chained");
  EXPECT_THROW(engine_from_string("pmm"), Error);
}

TEST(Tilt, LogNormalizer) {
  const Vector ell{0.3, -1.0, 2.0, 0.5};
  const TiltValue z = tilt_log_normalizer(ell, 0.0);
  EXPECT_NEAR(z.a, 0.0, 1e-15);
  EXPECT_NEAR(z.a_prime, 0.45, 1e-15);
  const Vector c(10, 1.7);
  const TiltValue tc = tilt_log_normalizer(c, 2.0);
  EXPECT_NEAR(tc.a, 3.4, 1e-12);
  EXPECT_NEAR(tc.a_prime, 1.7, 1e-12);
  // Large eta does not overflow.
  EXPECT_TRUE(std::isfinite(tilt_log_normalizer(ell, 800.0).a));
  RngStream rng(12);
  Vector g(1000000);
  for (auto& v : g) v = rng.normal();
  const TiltValue t1 = tilt_log_normalizer(g, 1.0);
  EXPECT_NEAR(t1.a, 0.5, 0.01);
  EXPECT_NEAR(t1.a_prime, 1.0, 0.02);
}

TEST(Tilt, SolveGaussianAndEdgeCases) {
  const Vector ell{0.3, -1.0, 2.0, 0.5};
  const TiltSolution zero = solve_tilt(ell, 0.0);
  EXPECT_EQ(zero.eta, 0.0);
  EXPECT_EQ(zero.kl, 0.0);
  RngStream rng(13);
  Vector g(200000);
  for (auto& v : g) v = rng.normal();
  const TiltSolution s = solve_tilt(g, 0.5);
  EXPECT_NEAR(s.kl, 0.5, 1e-8);
  EXPECT_NEAR(s.eta, 1.0, 0.03);
  // Solution satisfies the constraint as evaluated independently.
  const TiltValue v = tilt_log_normalizer(g, s.eta);
  EXPECT_NEAR(s.eta * v.a_prime - v.a, 0.5, 1e-8);
  try {
    solve_tilt(Vector(20, 3.0), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoSolutionInBracket);
  }
  // A radius beyond what the sample can express: KL is capped by log n.
  EXPECT_THROW(solve_tilt(ell, 10.0), Error);
  EXPECT_THROW(solve_tilt(ell, -0.1), Error);
}

TEST(Tilt, KlMonotoneInEta) {
  RngStream rng(14);
  Vector ell(5000);
  for (auto& v : ell) v = rng.exponential() - 1.0;
  double prev = -1;
  for (double eta = 0; eta <= 5; eta += 0.1) {
    const TiltValue t = tilt_log_normalizer(ell, eta);
    const double kl = eta * t.a_prime - t.a;
    EXPECT_GE(kl, prev - 1e-12);
    prev = kl;
  }
}
