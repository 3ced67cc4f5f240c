#include "fmstat/missing.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>

#include "fmstat/error.hpp"
#include "fmstat/linalg.hpp"

namespace fmstat::missing {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::pair<double, double> mean_sd(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return {m, sd};
}

}  // namespace

MaskedDataset MaskedDataset::complete(Matrix x) {
  Matrix m(x.rows(), x.cols(), 0.0);
  return MaskedDataset{std::move(x), std::move(m)};
}

std::size_t MaskedDataset::missing_count(std::size_t j) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < rows(); ++i) c += missing(i, j) ? 1 : 0;
  return c;
}

std::vector<std::size_t> MaskedDataset::observed_rows(std::size_t j) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows(); ++i)
    if (!missing(i, j)) out.push_back(i);
  return out;
}

std::vector<std::size_t> MaskedDataset::missing_rows(std::size_t j) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows(); ++i)
    if (missing(i, j)) out.push_back(i);
  return out;
}

std::vector<std::size_t> MaskedDataset::rows_missing_only(std::size_t j) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows(); ++i) {
    if (!missing(i, j)) continue;
    bool only = true;
    for (std::size_t c = 0; c < cols() && only; ++c) only = c == j || !missing(i, c);
    if (only) out.push_back(i);
  }
  return out;
}

void MaskedDataset::validate() const {
  require(x.rows() == m.rows() && x.cols() == m.cols(), ErrorCode::DimensionMismatch, "data and mask shapes differ");
  for (std::size_t i = 0; i < rows(); ++i)
    for (std::size_t j = 0; j < cols(); ++j) {
      require(m(i, j) == 0.0 || m(i, j) == 1.0, ErrorCode::InvalidArgument, "mask entries must be 0 or 1");
      require(missing(i, j) || std::isfinite(x(i, j)), ErrorCode::InvalidArgument, "observed cells must be finite");
    }
}

MaskedDataset mar_mask(const Matrix& x, std::size_t target, std::span<const double> weights, double w0,
                       RngStream& rng) {
  const std::size_t n = x.rows(), d = x.cols();
  require(target < d, ErrorCode::BadColumns, "target column out of range");
  require(weights.size() == d, ErrorCode::BadColumns, "one weight per column");
  require(weights[target] == 0.0, ErrorCode::BadColumns, "missingness cannot depend on the masked column");
  std::vector<std::size_t> used;
  for (std::size_t j = 0; j < d; ++j)
    if (weights[j] != 0.0) used.push_back(j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : used) require(std::isfinite(x(i, j)), ErrorCode::BadColumns, "weighted column is not fully observed");

  MaskedDataset md = MaskedDataset::complete(x);
  for (std::size_t i = 0; i < n; ++i) {
    double eta = w0;
    for (std::size_t j : used) eta += weights[j] * x(i, j);
    if (rng.bernoulli(logistic(eta))) {
      md.m(i, target) = 1.0;
      md.x(i, target) = kNaN;
    }
  }
  return md;
}

double mar_intercept_for_rate(const Matrix& x, std::span<const double> weights, double rate) {
  require(rate > 0.0 && rate < 1.0, ErrorCode::OutOfUnitInterval, "rate must lie in (0, 1)");
  require(weights.size() == x.cols(), ErrorCode::BadColumns, "one weight per column");
  require(x.rows() > 0, ErrorCode::EmptyInput, "no rows");
  Vector lin(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (weights[j] != 0.0) lin[i] += weights[j] * x(i, j);
  auto mean_rate = [&](double w0) {
    double s = 0.0;
    for (double l : lin) s += logistic(w0 + l);
    return s / static_cast<double>(lin.size());
  };
  double lo = -50.0, hi = 50.0;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_rate(mid) < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---- Imputation engines ----

ImputerConfig::ImputerConfig() {
  cfm.train.hidden = {64, 64};
  cfm.train.epochs = 200;
  cfm.train.step_size = 3e-3;
  cfm.train.batch_size = 128;
  cfm.train.cosine_schedule = true;
}

Vector FlowImputer::sample(const Matrix& cond, RngStream& rng) const {
  require(cond.cols() == predictors.size(), ErrorCode::DimensionMismatch, "imputer condition width");
  Matrix c(cond.rows(), cond.cols());
  for (std::size_t i = 0; i < cond.rows(); ++i)
    for (std::size_t j = 0; j < cond.cols(); ++j) c(i, j) = (cond(i, j) - cond_mean[j]) / cond_sd[j];
  const Matrix z = flow::flow_generate(model, cond.rows(), c, ode, rng);
  Vector out(cond.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = y_mean + y_sd * z(i, 0);
  return out;
}

FlowImputer fm_imputer_train(const MaskedDataset& md, std::size_t target, const ImputerConfig& cfg, RngStream& rng) {
  md.validate();
  require(target < md.cols(), ErrorCode::BadColumns, "target column out of range");
  std::vector<std::size_t> complete;
  for (std::size_t i = 0; i < md.rows(); ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < md.cols() && ok; ++j) ok = !md.missing(i, j);
    if (ok) complete.push_back(i);
  }
  require(complete.size() >= cfg.min_complete, ErrorCode::TooFewComplete,
          "only " + std::to_string(complete.size()) + " complete rows");

  FlowImputer imp;
  imp.target = target;
  imp.ode = cfg.ode;
  for (std::size_t j = 0; j < md.cols(); ++j)
    if (j != target) imp.predictors.push_back(j);
  const std::size_t n = complete.size(), p = imp.predictors.size();

  Vector col(n);
  for (std::size_t i = 0; i < n; ++i) col[i] = md.x(complete[i], target);
  std::tie(imp.y_mean, imp.y_sd) = mean_sd(col);
  if (!(imp.y_sd > 0.0)) imp.y_sd = 1.0;
  imp.cond_mean.resize(p);
  imp.cond_sd.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = md.x(complete[i], imp.predictors[j]);
    std::tie(imp.cond_mean[j], imp.cond_sd[j]) = mean_sd(col);
    if (!(imp.cond_sd[j] > 0.0)) imp.cond_sd[j] = 1.0;
  }

  Matrix c(n, p), y(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    y(i, 0) = (md.x(complete[i], target) - imp.y_mean) / imp.y_sd;
    for (std::size_t j = 0; j < p; ++j)
      c(i, j) = (md.x(complete[i], imp.predictors[j]) - imp.cond_mean[j]) / imp.cond_sd[j];
  }
  imp.model = flow::conditional_cfm_train(c, y, cfg.cfm, rng).model;
  return imp;
}

Matrix fm_impute(const MaskedDataset& md, const FlowImputer& imp, RngStream& rng) {
  const auto rows = md.rows_missing_only(imp.target);
  Matrix out = md.x;
  if (rows.empty()) return out;
  Matrix cond(rows.size(), imp.predictors.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < imp.predictors.size(); ++j) cond(r, j) = md.x(rows[r], imp.predictors[j]);
  const Vector draws = imp.sample(cond, rng);
  for (std::size_t r = 0; r < rows.size(); ++r) out(rows[r], imp.target) = draws[r];
  return out;
}

Matrix chained_gaussian_impute(const MaskedDataset& md, std::size_t sweeps, RngStream& rng) {
  md.validate();
  const std::size_t n = md.rows(), d = md.cols();
  Matrix x = md.x;
  std::vector<std::size_t> incomplete;
  for (std::size_t j = 0; j < d; ++j) {
    const auto obs = md.observed_rows(j);
    if (obs.size() == n) continue;
    require(obs.size() >= 50, ErrorCode::TooFewComplete, "column " + std::to_string(j) + " has fewer than 50 observed rows");
    incomplete.push_back(j);
    double m = 0.0;
    for (auto i : obs) m += md.x(i, j) / static_cast<double>(obs.size());
    for (std::size_t i = 0; i < n; ++i)
      if (md.missing(i, j)) x(i, j) = m;
  }
  if (incomplete.empty()) return x;

  for (std::size_t s = 0; s < sweeps; ++s) {
    for (std::size_t j : incomplete) {
      const auto obs = md.observed_rows(j);
      const std::size_t p = d;  // intercept + the d - 1 other columns
      Matrix design(obs.size(), p);
      Vector y(obs.size());
      for (std::size_t r = 0; r < obs.size(); ++r) {
        design(r, 0) = 1.0;
        for (std::size_t c = 0, k = 1; c < d; ++c)
          if (c != j) design(r, k++) = x(obs[r], c);
        y[r] = x(obs[r], j);
      }
      const Vector beta = least_squares(design, y);
      double rss = 0.0;
      for (std::size_t r = 0; r < obs.size(); ++r) rss += std::pow(y[r] - dot(design.row(r), beta), 2);
      // Posterior draw under a flat prior: sigma^2 ~ RSS / chi2(n - p),
      // beta ~ N(beta_hat, sigma^2 (X^T X)^{-1}).
      const double df = static_cast<double>(obs.size() - p);
      const double sigma2 = rss / std::chi_squared_distribution<double>(df)(rng);
      const Matrix xtx = design.transpose() * design;
      const SpdFactor chol_inv = cholesky(inverse_spd(cholesky(xtx)));
      Vector z(p);
      for (auto& v : z) v = rng.normal();
      const Vector shift = chol_inv.lower * z;
      Vector bdraw(beta);
      for (std::size_t k = 0; k < p; ++k) bdraw[k] += std::sqrt(sigma2) * shift[k];
      const double sd = std::sqrt(sigma2);
      for (std::size_t i = 0; i < n; ++i) {
        if (!md.missing(i, j)) continue;
        double mu = bdraw[0];
        for (std::size_t c = 0, k = 1; c < d; ++c)
          if (c != j) mu += bdraw[k++] * x(i, c);
        x(i, j) = mu + sd * rng.normal();
      }
    }
  }
  return x;
}

// ---- Multiple imputation ----

RubinResult rubin_combine(std::span<const Vector> estimates, std::span<const Matrix> variances) {
  const std::size_t k = estimates.size();
  require(k >= 2, ErrorCode::TooFewImputations, "Rubin's rules need at least two imputations");
  require(variances.size() == k, ErrorCode::DimensionMismatch, "one variance per estimate");
  const std::size_t p = estimates[0].size();
  for (std::size_t i = 0; i < k; ++i) {
    require(estimates[i].size() == p, ErrorCode::DimensionMismatch, "estimate dimensions differ");
    require(variances[i].rows() == p && variances[i].cols() == p, ErrorCode::DimensionMismatch,
            "variance dimensions differ");
  }
  RubinResult r{Vector(p, 0.0), Matrix(p, p), Matrix(p, p), Matrix(p, p), k};
  const double kd = static_cast<double>(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t a = 0; a < p; ++a) r.theta[a] += estimates[i][a] / kd;
    r.v_bar += variances[i];
  }
  r.v_bar *= 1.0 / kd;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < p; ++b)
        r.b(a, b) += (estimates[i][a] - r.theta[a]) * (estimates[i][b] - r.theta[b]) / (kd - 1.0);
  r.t = r.v_bar + (1.0 + 1.0 / kd) * r.b;
  return r;
}

Analysis ols_analysis(std::size_t response, bool standardize) {
  return [response, standardize](const Matrix& data) {
    const std::size_t n = data.rows(), d = data.cols();
    require(response < d, ErrorCode::BadColumns, "response column out of range");
    require(n > d, ErrorCode::TooFewRows, "regression needs more rows than columns");
    Vector mean(d, 0.0), sd(d, 1.0);
    if (standardize) {
      Vector col(n);
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = data(i, j);
        std::tie(mean[j], sd[j]) = mean_sd(col);
        require(sd[j] > 0.0, ErrorCode::SingularDesign, "constant column cannot be standardized");
      }
    }
    Matrix design(n, d);
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
      design(i, 0) = 1.0;
      for (std::size_t j = 0, k = 1; j < d; ++j)
        if (j != response) design(i, k++) = (data(i, j) - mean[j]) / sd[j];
      y[i] = (data(i, response) - mean[response]) / sd[response];
    }
    const Vector beta = least_squares(design, y);
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) rss += std::pow(y[i] - dot(design.row(i), beta), 2);
    const double s2 = rss / static_cast<double>(n - d);
    Matrix cov = inverse_spd(cholesky(design.transpose() * design));
    cov *= s2;
    return std::make_pair(beta, cov);
  };
}

std::string to_string(Engine e) { return e == Engine::Flow ? "flow" : "chained"; }

Engine engine_from_string(const std::string& s) {
  if (s == "flow") return Engine::Flow;
  if (s == "chained") return Engine::Chained;
  fail(ErrorCode::InvalidArgument, "unknown imputation engine '" + s + "'");
}

MiResult mi_pipeline(const MaskedDataset& md, const MiConfig& cfg, const Analysis& analysis, RngStream& rng) {
  md.validate();
  const std::size_t d = md.cols();
  bool any_missing = false;
  for (std::size_t j = 0; j < d && !any_missing; ++j) any_missing = md.missing_count(j) > 0;
  MiResult res;
  if (!any_missing) {
    auto [theta, v] = analysis(md.x);
    const std::size_t p = theta.size();
    res.rubin = RubinResult{theta, v, Matrix(p, p), v, 1};
    res.completed.push_back(md.x);
    return res;
  }
  require(cfg.imputations >= 2, ErrorCode::TooFewImputations, "multiple imputation needs K >= 2");

  std::vector<FlowImputer> imputers;
  bool needs_chained = false;
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t miss = md.missing_count(j);
    if (miss == 0) continue;
    bool flow_ok = cfg.engine == Engine::Flow && md.rows_missing_only(j).size() == miss;
    if (flow_ok) {
      try {
        RngStream train_rng = rng.child(1000 + j);
        imputers.push_back(fm_imputer_train(md, j, cfg.flow, train_rng));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::TooFewComplete) throw;
        flow_ok = false;
      }
    }
    needs_chained = needs_chained || !flow_ok;
  }

  const std::size_t k = cfg.imputations;
  res.completed.resize(k);
  std::vector<Vector> est(k);
  std::vector<Matrix> var(k);
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t r = 0; r < k; ++r) {
    try {
      RngStream draw = rng.child(r);
      Matrix x = needs_chained ? chained_gaussian_impute(md, cfg.sweeps, draw) : md.x;
      for (const auto& imp : imputers) {
        const Matrix filled = fm_impute(md, imp, draw);
        for (std::size_t i : md.missing_rows(imp.target)) x(i, imp.target) = filled(i, imp.target);
      }
      std::tie(est[r], var[r]) = analysis(x);
      res.completed[r] = std::move(x);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  res.rubin = rubin_combine(est, var);
  return res;
}

// ---- MNAR sensitivity ----

TiltValue tilt_log_normalizer(std::span<const double> ell, double eta) {
  require(!ell.empty(), ErrorCode::EmptySample, "tilt needs samples");
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : ell) {
    require(std::isfinite(l), ErrorCode::NonFinite, "l values must be finite");
    mx = std::max(mx, eta * l);
  }
  double s = 0.0, sl = 0.0;
  for (double l : ell) {
    const double w = std::exp(eta * l - mx);
    s += w;
    sl += w * l;
  }
  return {mx + std::log(s / static_cast<double>(ell.size())), sl / s};
}

TiltSolution solve_tilt(std::span<const double> ell, double rho) {
  require(rho >= 0.0 && std::isfinite(rho), ErrorCode::InvalidArgument, "radius must be non-negative");
  require(!ell.empty(), ErrorCode::EmptySample, "tilt needs samples");
  if (rho == 0.0) return {0.0, 0.0, 0.0};
  double m = 0.0;
  for (double l : ell) m += l / static_cast<double>(ell.size());
  double ss = 0.0;
  for (double l : ell) ss += (l - m) * (l - m);
  const double sd = std::sqrt(ss / static_cast<double>(ell.size()));
  if (!(sd > 0.0)) fail(ErrorCode::NoSolutionInBracket, "constant l: KL stays at zero");

  std::vector<std::pair<double, double>> seen;  // (eta, KL)
  auto kl_at = [&](double eta) {
    const TiltValue v = tilt_log_normalizer(ell, eta);
    const double kl = eta * v.a_prime - v.a;
    seen.emplace_back(eta, kl);
    return std::make_pair(kl, v.a);
  };
  double lo = 0.0, hi = 50.0 / sd;
  if (kl_at(hi).first < rho) fail(ErrorCode::NoSolutionInBracket, "radius not reached at eta = 50 / sd(l)");
  TiltSolution sol;
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const auto [kl, a] = kl_at(mid);
    sol = {mid, a, kl};
    if (std::abs(kl - rho) < 1e-8) break;
    (kl < rho ? lo : hi) = mid;
    if (hi - lo <= 1e-15 * hi) break;
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 1; i < seen.size(); ++i)
    require(seen[i].second >= seen[i - 1].second - 1e-10 * (1.0 + std::abs(seen[i].second)), ErrorCode::NoConvergence,
            "KL is not monotone in eta");
  return sol;
}

}  // namespace fmstat::missing
