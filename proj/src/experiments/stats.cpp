#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fmstat/diagnostics.hpp"
#include "fmstat/error.hpp"
#include "fmstat/experiments.hpp"
#include "fmstat/linalg.hpp"

namespace fmstat::experiments {

// ---- KSD ----

KsdStudyResult ksd_study(const KsdStudyConfig& cfg, RngStream& rng) {
  require(cfg.reps >= 1 && cfg.d >= 1, ErrorCode::InvalidArgument, "ksd_study: bad sizes");
  const diag::ScoreFn std_normal = [](std::span<const double> x) {
    Vector s(x.begin(), x.end());
    for (auto& v : s) v = -v;
    return s;
  };
  KsdStudyResult out;
  out.rows.resize(cfg.reps);
  for (std::size_t r = 0; r < cfg.reps; ++r) {
    RngStream rr = rng.child(r);
    KsdStudyRow& row = out.rows[r];
    row.rep = r;
    for (int alt = 0; alt < 2; ++alt) {
      Matrix x(cfg.n, cfg.d);
      for (std::size_t k = 0; k < x.size(); ++k) x.data()[k] = rr.normal() + (alt ? cfg.shift : 0.0);
      const auto res = diag::ksd_wild_bootstrap(x, std_normal, diag::RbfKernel{diag::median_heuristic(x)}, cfg.b, rr);
      (alt ? row.stat_alt : row.stat_null) = res.statistic;
      (alt ? row.p_alt : row.p_null) = res.p_value;
    }
    if (row.p_null < cfg.alpha) out.null_rate += 1.0;
    if (row.p_alt < cfg.alpha) out.power += 1.0;
  }
  out.null_rate /= static_cast<double>(cfg.reps);
  out.power /= static_cast<double>(cfg.reps);
  return out;
}

// ---- Semiparametric linear regression ----

LinregStudyResult linreg_study(const LinregStudyConfig& cfg, RngStream& rng) {
  require(cfg.reps >= 1, ErrorCode::InvalidArgument, "linreg_study: reps must be positive");
  LinregStudyResult out;
  out.beta_true = {1.0, 2.0, -1.0};
  inference::SemiparamConfig fixed;
  fixed.fixed_moments = std::make_pair(0.0, 3.0);
  for (std::size_t r = 0; r < cfg.reps; ++r) {
    RngStream rr = rng.child(r);
    Matrix x(cfg.n, 3);
    Vector y(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = rr.normal();
      x(i, 2) = rr.uniform(-1, 1);
      const double e = cfg.skewed ? rr.exponential() - 1.0 : rr.normal();
      y[i] = dot(x.row(i), out.beta_true) + cfg.noise * e;
    }
    const auto fit = inference::semiparam_linreg_fit(x, y, cfg.folds, inference::SemiparamConfig{}, rr);
    const auto fit0 = inference::semiparam_linreg_fit(x, y, cfg.folds, fixed, rr);
    LinregStudyRow row{r, fit.ols_beta, fit.beta, fit.scale_fallback, 0.0};
    for (std::size_t j = 0; j < 3; ++j) {
      row.fixed_gap = std::max(row.fixed_gap, std::abs(fit0.beta[j] - fit0.ols_beta[j]));
      out.mse_ols += std::pow(fit.ols_beta[j] - out.beta_true[j], 2);
      out.mse_semi += std::pow(fit.beta[j] - out.beta_true[j], 2);
    }
    out.max_fixed_gap = std::max(out.max_fixed_gap, row.fixed_gap);
    out.rows.push_back(std::move(row));
  }
  out.mse_ols /= static_cast<double>(cfg.reps);
  out.mse_semi /= static_cast<double>(cfg.reps);
  return out;
}

// ---- Copula ----

std::string to_string(CopulaDgp g) { return g == CopulaDgp::Gaussian ? "gaussian" : "s-shape"; }

CopulaDgp copula_dgp_from_string(const std::string& s) {
  if (s == "gaussian") return CopulaDgp::Gaussian;
  if (s == "s-shape") return CopulaDgp::SShape;
  fail(ErrorCode::InvalidArgument, "unknown copula DGP '" + s + "'");
}

Matrix copula_dgp_draw(const CopulaDemoConfig& cfg, std::size_t n, RngStream& rng) {
  require(std::abs(cfg.rho) < 1.0, ErrorCode::InvalidArgument, "copula DGP: |rho| must be below 1");
  Matrix x(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double z1 = rng.normal(), z2 = rng.normal();
    if (cfg.dgp == CopulaDgp::Gaussian) {
      x(i, 0) = std::exp(z1);
      x(i, 1) = std::pow(cfg.rho * z1 + std::sqrt(1.0 - cfg.rho * cfg.rho) * z2, 3);
    } else {
      x(i, 0) = z1;
      x(i, 1) = 0.8 * (z1 * z1 - 1.0) + 0.4 * z2;
    }
  }
  return x;
}

CopulaDemoResult copula_demo(const CopulaDemoConfig& cfg, RngStream& rng) {
  CopulaDemoResult out;
  out.data = copula_dgp_draw(cfg, cfg.n, rng);
  out.pseudo = copula::ranks_to_pseudo(out.data, cfg.copula.eps).u;
  // Strictly increasing maps per margin leave the ranks untouched.
  Matrix mapped(out.data.rows(), 2);
  for (std::size_t i = 0; i < out.data.rows(); ++i) {
    mapped(i, 0) = std::atan(out.data(i, 0)) + 3.0 * out.data(i, 0);
    mapped(i, 1) = std::exp(0.5 * out.data(i, 1)) - 10.0;
  }
  out.invariance_exact = copula::ranks_to_pseudo(mapped, cfg.copula.eps).u.values() == out.pseudo.values();
  out.tau_data = copula::kendall_tau(out.pseudo);
  out.tau_theory = cfg.dgp == CopulaDgp::Gaussian ? 2.0 / std::numbers::pi * std::asin(cfg.rho)
                                                  : std::numeric_limits<double>::quiet_NaN();
  const auto model = copula::flow_copula_train(out.data, cfg.transform, cfg.copula, rng);
  out.sample = copula::copula_sample(model, cfg.n_sample, rng);
  if (cfg.n_sample >= 2) {
    out.tau_sample = copula::kendall_tau(out.sample);
    const auto unif = [](double u) { return std::clamp(u, 0.0, 1.0); };
    out.ks_u1 = diag::ks_statistic(out.sample.col(0), unif);
    out.ks_u2 = diag::ks_statistic(out.sample.col(1), unif);
  }
  return out;
}

// ---- Multiple imputation ----

Matrix mi_dgp_draw(std::size_t n, RngStream& rng) {
  Matrix x(n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = rng.normal(), x2 = rng.normal();
    const double s = rng.bernoulli(1.0 / (1.0 + std::exp(-1.5 * x1))) ? 1.0 : -1.0;
    const double x3 = s * (1.2 + 0.3 * x2) + 0.35 * rng.normal();
    x(i, 0) = x1;
    x(i, 1) = x2;
    x(i, 2) = x3;
    x(i, 3) = 0.5 * x1 + 0.8 * x2 + x3 + rng.normal();
  }
  return x;
}

Vector mi_true_beta() {
  // Var X3 = E(1.2 + 0.3 X2)^2 + 0.35^2 = 1.44 + 0.09 + 0.1225; E Y = 0.
  return {0.0, 0.5, 0.8, std::sqrt(1.44 + 0.09 + 0.1225)};
}

missing::Analysis mi_analysis() {
  return [](const Matrix& c) {
    const std::size_t n = c.rows();
    Matrix design(n, 4);
    for (std::size_t j = 0; j < 3; ++j) {
      const auto [m, sd] = mean_sd(c.col(j));
      require(sd > 0.0, ErrorCode::SingularDesign, "mi analysis: constant column");
      for (std::size_t i = 0; i < n; ++i) design(i, j + 1) = (c(i, j) - m) / sd;
    }
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
      design(i, 0) = 1.0;
      y[i] = c(i, 3);
    }
    const Vector beta = least_squares(design, y);
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) rss += std::pow(y[i] - dot(design.row(i), beta), 2);
    const double s2 = rss / static_cast<double>(n - 4);
    Matrix cov = inverse_spd(cholesky(design.transpose() * design));
    cov *= s2;
    // The centred design makes the intercept equal to mean(Y); with random X
    // its sampling variance is Var(Y) / n, not the conditional s^2 / n.
    cov(0, 0) = std::pow(mean_sd(y).second, 2) / static_cast<double>(n);
    return std::pair{beta, cov};
  };
}

namespace {

MiEngineSummary summarize_engine(missing::Engine engine, missing::MiResult res, std::span<const std::size_t> rows,
                                 std::span<const double> truth) {
  MiEngineSummary s;
  s.engine = engine;
  s.rubin = std::move(res.rubin);
  const std::size_t k = res.completed.size();
  double se = 0.0, brier = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double mean = 0.0, above = 0.0;
    for (const Matrix& c : res.completed) {
      const double v = c(rows[r], 2);
      s.pooled.push_back(v);
      mean += v;
      above += v > 0.0 ? 1.0 : 0.0;
    }
    mean /= static_cast<double>(k);
    above /= static_cast<double>(k);
    se += std::pow(mean - truth[r], 2);
    brier += std::pow(above - (truth[r] > 0.0 ? 1.0 : 0.0), 2);
  }
  const double nm = static_cast<double>(rows.size());
  s.rmse = std::sqrt(se / nm);
  s.brier = brier / nm;
  s.w1 = diag::w1_1d(s.pooled, truth);
  for (double v : s.pooled) (v < 0.0 ? s.mass_low : s.mass_high) += 1.0;
  s.mass_low /= static_cast<double>(s.pooled.size());
  s.mass_high /= static_cast<double>(s.pooled.size());
  return s;
}

}  // namespace

MiDemoResult mi_demo(const MiDemoConfig& cfg, RngStream& rng) {
  require(cfg.rate > 0.0 && cfg.rate < 1.0, ErrorCode::InvalidArgument, "mi_demo: rate must lie in (0, 1)");
  RngStream data_rng = rng.child(0);
  const Matrix full = mi_dgp_draw(cfg.n, data_rng);
  const Vector w{0.5, -0.5, 0.0, 0.0};
  const double w0 = missing::mar_intercept_for_rate(full, w, cfg.rate);
  const missing::MaskedDataset md = missing::mar_mask(full, 2, w, w0, data_rng);

  MiDemoResult out;
  out.beta_true = mi_true_beta();
  const auto rows = md.missing_rows(2);
  out.realized_rate = static_cast<double>(rows.size()) / static_cast<double>(cfg.n);
  for (auto i : rows) out.truth.push_back(full(i, 2));
  require(!rows.empty(), ErrorCode::ExperimentFailed, "mi_demo: no missing rows");

  missing::MiConfig mc;
  mc.imputations = cfg.imputations;
  mc.sweeps = cfg.sweeps;
  mc.flow = cfg.flow;
  const auto analysis = mi_analysis();
  mc.engine = missing::Engine::Chained;
  RngStream chained_rng = rng.child(1);
  out.chained = summarize_engine(mc.engine, missing::mi_pipeline(md, mc, analysis, chained_rng), rows, out.truth);
  mc.engine = missing::Engine::Flow;
  RngStream flow_rng = rng.child(2);
  out.flow = summarize_engine(mc.engine, missing::mi_pipeline(md, mc, analysis, flow_rng), rows, out.truth);
  return out;
}

}  // namespace fmstat::experiments
