#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "fmstat/error.hpp"
#include "fmstat/experiments.hpp"
#include "fmstat/kernels.hpp"
#include "fmstat/linalg.hpp"

namespace fmstat::experiments {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

double rmse(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::DimensionMismatch, "rmse: shapes differ");
  require(!a.empty(), ErrorCode::EmptyInput, "rmse: empty matrices");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a.data()[k] - b.data()[k];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

std::pair<double, double> mean_sd(std::span<const double> v) {
  require(v.size() >= 2, ErrorCode::TooFewSamples, "mean_sd needs two values");
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

// ---- GGM ----

Matrix ggm_true_precision(const GgmBenchConfig& cfg, RngStream& rng) {
  require(cfg.d >= 2, ErrorCode::InvalidArgument, "ggm: d must be at least 2");
  require(cfg.diag_margin > 0.0, ErrorCode::InvalidArgument, "ggm: diag_margin must be positive");
  Matrix k(cfg.d, cfg.d);
  for (std::size_t i = 0; i < cfg.d; ++i)
    for (std::size_t j = i + 1; j < cfg.d; ++j) {
      if (!rng.bernoulli(cfg.edge_prob)) continue;
      const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      k(i, j) = k(j, i) = sign * rng.uniform(cfg.edge_lo, cfg.edge_hi);
    }
  const double lmin = min_eigenvalue_sym(k);
  for (std::size_t i = 0; i < cfg.d; ++i) k(i, i) = cfg.diag_margin - lmin;
  return k;
}

Matrix ggm_sample_covariance(const Matrix& sigma_lower, std::size_t n, RngStream& rng) {
  const std::size_t d = sigma_lower.rows();
  require(n >= 2, ErrorCode::TooFewSamples, "ggm: need at least two draws");
  Matrix x(n, d);
  Vector z(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : z) v = rng.normal();
    auto row = x.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b <= a; ++b) s += sigma_lower(a, b) * z[b];
      row[a] = s;
    }
  }
  return kernels::parallel::centered_covariance(x);
}

std::size_t GgmBenchResult::sm_rmse_wins() const {
  return static_cast<std::size_t>(
      std::count_if(reps.begin(), reps.end(), [](const GgmRep& r) { return r.rmse_sm < r.rmse_mle; }));
}

std::size_t GgmBenchResult::sm_time_wins() const {
  return static_cast<std::size_t>(
      std::count_if(reps.begin(), reps.end(), [](const GgmRep& r) { return r.ct_sm < r.ct_mle; }));
}

GgmBenchResult ggm_bench(const GgmBenchConfig& cfg, RngStream& rng) {
  require(cfg.reps >= 1, ErrorCode::InvalidArgument, "ggm: reps must be positive");
  const auto t_start = std::chrono::steady_clock::now();
  RngStream truth_rng = rng.child(0);
  const Matrix k_true = ggm_true_precision(cfg, truth_rng);
  const Matrix sigma_lower = cholesky(inverse_spd(cholesky(k_true))).lower;

  GgmBenchResult out;
  if (cfg.lambda && cfg.rho && cfg.alpha) {
    out.lambda = *cfg.lambda;
    out.rho = *cfg.rho;
    out.alpha = *cfg.alpha;
  } else {
    require(!cfg.lambda_grid.empty() && !cfg.rho_grid.empty() && !cfg.alpha_grid.empty(),
            ErrorCode::InvalidArgument, "ggm: empty tuning grid");
    RngStream pilot_rng = rng.child(1);
    const Matrix s = ggm_sample_covariance(sigma_lower, cfg.n, pilot_rng);
    double best = std::numeric_limits<double>::infinity();
    for (double lam : cfg.lambda_grid)
      for (double rho : cfg.rho_grid) {
        const double e = rmse(score::ggm_sm_prox_fit({s, lam, rho, cfg.max_iter, cfg.tol}).k, k_true);
        if (e < best) {
          best = e;
          out.lambda = lam;
          out.rho = rho;
        }
      }
    best = std::numeric_limits<double>::infinity();
    for (double alpha : cfg.alpha_grid) {
      const double e = rmse(score::glasso_fit(s, alpha, cfg.max_iter, cfg.tol).k, k_true);
      if (e < best) {
        best = e;
        out.alpha = alpha;
      }
    }
    if (cfg.lambda) out.lambda = *cfg.lambda;
    if (cfg.rho) out.rho = *cfg.rho;
    if (cfg.alpha) out.alpha = *cfg.alpha;
  }
  out.tune_seconds = seconds_since(t_start);

  for (std::size_t r = 0; r < cfg.reps; ++r) {
    RngStream rr = rng.child(2 + r);
    const Matrix s = ggm_sample_covariance(sigma_lower, cfg.n, rr);
    GgmRep rep;
    rep.rep = r;
    auto t0 = std::chrono::steady_clock::now();
    const auto sm = score::ggm_sm_prox_fit({s, out.lambda, out.rho, cfg.max_iter, cfg.tol});
    rep.ct_sm = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    const auto mle = score::glasso_fit(s, out.alpha, cfg.max_iter, cfg.tol);
    rep.ct_mle = seconds_since(t0);
    rep.rmse_sm = rmse(sm.k, k_true);
    rep.iter_sm = sm.iterations;
    rep.rmse_mle = rmse(mle.k, k_true);
    rep.iter_mle = mle.iterations;
    out.reps.push_back(rep);
  }
  out.total_seconds = seconds_since(t_start);
  return out;
}

// ---- Quartic ----

QuarticDemoResult quartic_demo(std::size_t n, RngStream& rng) {
  Vector x(n);
  for (auto& v : x) v = rng.normal();
  QuarticDemoResult out;
  out.theta = score::quartic_sm_fit(x);
  out.objective = score::quartic_sm_objective(out.theta, x);
  out.n = n;
  return out;
}

}  // namespace fmstat::experiments
