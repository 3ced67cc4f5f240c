#include "fmstat/inference.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <tuple>

#include <nlohmann/json.hpp>

#include "fmstat/error.hpp"
#include "fmstat/linalg.hpp"

namespace fmstat::inference {

void CausalData::validate() const {
  require(x.rows() == y.size() && a.size() == y.size(), ErrorCode::DimensionMismatch, "causal data rows");
  for (double v : a) require(v == 0.0 || v == 1.0, ErrorCode::InvalidArgument, "treatment must be 0 or 1");
}

CausalData CausalData::subset(std::span<const std::size_t> rows) const {
  CausalData out{Matrix(rows.size(), x.cols()), Vector(rows.size()), Vector(rows.size())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.row(rows[i]).data(), x.cols(), out.x.row(i).data());
    out.a[i] = a[rows[i]];
    out.y[i] = y[rows[i]];
  }
  return out;
}

std::vector<std::size_t> FoldPlan::members(std::size_t f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (fold[i] == f) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::complement(std::size_t f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (fold[i] != f) out.push_back(i);
  return out;
}

FoldPlan fold_split(std::size_t n, std::size_t k, RngStream& rng) {
  require(k >= 2 && k <= n, ErrorCode::BadK, "need 2 <= K <= n");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  FoldPlan plan{n, k, std::vector<std::size_t>(n)};
  for (std::size_t pos = 0; pos < n; ++pos) plan.fold[perm[pos]] = pos % k;
  return plan;
}

double Nuisance::propensity(std::span<const double> x) const { return std::clamp(e(x), clip, 1.0 - clip); }

double aipw_term(std::span<const double> x, double a, double y, const Nuisance& nu) {
  const double m1 = nu.mu1(x), m0 = nu.mu0(x), e = nu.propensity(x);
  return m1 - m0 + a * (y - m1) / e - (1.0 - a) * (y - m0) / (1.0 - e);
}

double aipw_score(std::span<const double> x, double a, double y, double psi, const Nuisance& nu) {
  return aipw_term(x, a, y, nu) - psi;
}

std::string AteReport::to_json() const {
  nlohmann::ordered_json j;
  j["psi_hat"] = psi;
  j["se"] = se;
  j["ci95"] = {lo, hi};
  j["fold_means"] = fold_means;
  j["n"] = n;
  return j.dump(2);
}

AteReport ate_crossfit(const CausalData& data, std::size_t k, const NuisanceLearner& learner, double clip,
                       RngStream& rng) {
  data.validate();
  require(clip > 0.0 && clip < 0.5, ErrorCode::InvalidArgument, "clip must lie in (0, 0.5)");
  const std::size_t n = data.size();
  const FoldPlan plan = fold_split(n, k, rng);

  std::vector<CausalData> train(k);
  for (std::size_t f = 0; f < k; ++f) {
    train[f] = data.subset(plan.complement(f));
    const double treated = std::accumulate(train[f].a.begin(), train[f].a.end(), 0.0);
    require(treated > 0.0 && treated < static_cast<double>(train[f].size()), ErrorCode::ArmMissing,
            "training complement of fold " + std::to_string(f) + " lacks a treatment arm");
  }

  std::vector<Nuisance> nuis(k);
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t f = 0; f < k; ++f) {
    try {
      RngStream fr = rng.child(f);
      nuis[f] = learner(train[f], fr);
      nuis[f].clip = clip;
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);

  Vector phi(n);
  AteReport rep;
  rep.n = n;
  rep.fold_means.assign(k, 0.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t f = plan.fold[i];
    phi[i] = aipw_term(data.x.row(i), data.a[i], data.y[i], nuis[f]);
    rep.fold_means[f] += phi[i];
    ++counts[f];
  }
  for (std::size_t f = 0; f < k; ++f) rep.fold_means[f] /= static_cast<double>(counts[f]);
  rep.psi = std::accumulate(phi.begin(), phi.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : phi) ss += (v - rep.psi) * (v - rep.psi);
  rep.se = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n)) : 0.0;
  rep.lo = rep.psi - 1.96 * rep.se;
  rep.hi = rep.psi + 1.96 * rep.se;
  return rep;
}

Vector cate_pseudo_outcomes(const CausalData& data, const Nuisance& nu) {
  data.validate();
  Vector out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = aipw_term(data.x.row(i), data.a[i], data.y[i], nu);
  return out;
}

std::pair<double, double> ipw_means(const CausalData& data, const RegressionFn& e, double clip) {
  data.validate();
  const std::size_t n = data.size();
  require(n > 0, ErrorCode::EmptySample, "IPW of an empty sample");
  double m1 = 0.0, m0 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(e(data.x.row(i)), clip, 1.0 - clip);
    if (data.a[i] == 1.0)
      m1 += data.y[i] / p;
    else
      m0 += data.y[i] / (1.0 - p);
  }
  return {m1 / static_cast<double>(n), m0 / static_cast<double>(n)};
}

double gformula_mean(const CausalData& data, const RegressionFn& mu) {
  require(data.x.rows() > 0, ErrorCode::EmptySample, "g-formula of an empty sample");
  double s = 0.0;
  for (std::size_t i = 0; i < data.x.rows(); ++i) s += mu(data.x.row(i));
  return s / static_cast<double>(data.x.rows());
}

// ---- Learners ----

Matrix with_intercept(const Matrix& x) {
  Matrix d(x.rows(), x.cols() + 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    d(i, 0) = 1.0;
    std::copy_n(x.row(i).data(), x.cols(), d.row(i).data() + 1);
  }
  return d;
}

Vector logistic_fit(const Matrix& design, std::span<const double> labels, std::size_t max_iter) {
  require(design.rows() == labels.size(), ErrorCode::DimensionMismatch, "logistic_fit rows");
  const std::size_t n = design.rows(), p = design.cols();
  Vector beta(p, 0.0);
  for (std::size_t it = 0; it < max_iter; ++it) {
    Matrix h(p, p);
    Vector g(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = design.row(i);
      const double mu = 1.0 / (1.0 + std::exp(-dot(r, beta)));
      const double w = std::max(mu * (1.0 - mu), 1e-10);
      for (std::size_t a = 0; a < p; ++a) {
        g[a] += r[a] * (labels[i] - mu);
        for (std::size_t b = a; b < p; ++b) h(a, b) += w * r[a] * r[b];
      }
    }
    for (std::size_t a = 0; a < p; ++a) {
      h(a, a) += 1e-8;  // keeps separable data from stalling the factorisation
      for (std::size_t b = 0; b < a; ++b) h(a, b) = h(b, a);
    }
    SpdFactor f;
    if (!try_cholesky(h, f)) fail(ErrorCode::SingularDesign, "logistic design is rank deficient");
    const Vector step = solve_spd(f, g);
    double change = 0.0;
    for (std::size_t a = 0; a < p; ++a) {
      beta[a] += step[a];
      change = std::max(change, std::abs(step[a]));
    }
    if (change < 1e-10) break;
  }
  return beta;
}

namespace {

RegressionFn linear_fn(Vector coef) {
  return [coef = std::move(coef)](std::span<const double> x) {
    double v = coef[0];
    for (std::size_t j = 0; j < x.size(); ++j) v += coef[j + 1] * x[j];
    return v;
  };
}

RegressionFn arm_ols(const CausalData& train, double arm) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.a[i] == arm) rows.push_back(i);
  const CausalData sub = train.subset(rows);
  return linear_fn(least_squares(with_intercept(sub.x), sub.y));
}

}  // namespace

NuisanceLearner linear_learner(OutcomeModel outcome, PropensityModel propensity) {
  return [outcome, propensity](const CausalData& train, RngStream&) {
    Nuisance nu;
    if (outcome == OutcomeModel::Linear) {
      nu.mu0 = arm_ols(train, 0.0);
      nu.mu1 = arm_ols(train, 1.0);
    } else {
      nu.mu0 = nu.mu1 = [](std::span<const double>) { return 0.0; };
    }
    if (propensity == PropensityModel::Logistic) {
      const Vector coef = logistic_fit(with_intercept(train.x), train.a);
      nu.e = [lin = linear_fn(coef)](std::span<const double> x) { return 1.0 / (1.0 + std::exp(-lin(x))); };
    } else {
      const double p = std::accumulate(train.a.begin(), train.a.end(), 0.0) / static_cast<double>(train.size());
      nu.e = [p](std::span<const double>) { return p; };
    }
    return nu;
  };
}

NuisanceLearner fixed_learner(Nuisance nu) {
  return [nu = std::move(nu)](const CausalData&, RngStream&) { return nu; };
}

// ---- Semiparametric linear regression ----

EffScoreCoef eff_coef_from_moments(double mu3, double mu4) {
  const double det = mu4 - 1.0 - mu3 * mu3;
  require(std::isfinite(det) && det > 1e-8, ErrorCode::DegenerateMoments, "mu4 - 1 - mu3^2 must exceed 1e-8");
  return EffScoreCoef{mu3, mu4, -(mu4 - 1.0) / det, mu3 / det};
}

EffScoreCoef residual_eff_coeffs(std::span<const double> residuals) {
  require(residuals.size() >= 2, ErrorCode::TooFewSamples, "need at least two residuals");
  const double n = static_cast<double>(residuals.size());
  double mean = 0.0;
  for (double r : residuals) mean += r / n;
  double m2 = 0.0;
  for (double r : residuals) m2 += (r - mean) * (r - mean) / n;
  require(m2 > 0.0, ErrorCode::DegenerateMoments, "residuals have zero variance");
  const double sd = std::sqrt(m2);
  double m3 = 0.0, m4 = 0.0;
  for (double r : residuals) {
    const double z = (r - mean) / sd;
    m3 += z * z * z / n;
    m4 += z * z * z * z / n;
  }
  return eff_coef_from_moments(m3, m4);
}

LinregScores efficient_scores_linreg(std::span<const double> x, double y, std::span<const double> beta, double sigma2,
                                     const EffScoreCoef& coef) {
  require(x.size() == beta.size(), ErrorCode::DimensionMismatch, "efficient score dimensions");
  require(sigma2 > 0.0, ErrorCode::InvalidArgument, "sigma2 must be positive");
  const double sigma = std::sqrt(sigma2);
  const double e = (y - dot(x, beta)) / sigma;
  const double s = coef.project(e);
  LinregScores out{Vector(x.size()), -(1.0 + e * s) / (2.0 * sigma2)};
  for (std::size_t j = 0; j < x.size(); ++j) out.psi_beta[j] = -x[j] * s / sigma;
  return out;
}

namespace {

struct PooledEquations {
  Vector value;  // mean score, length p + 1
  Matrix jac;    // mean derivative wrt (beta, sigma2)
  Matrix outer;  // mean score outer product
};

PooledEquations pooled(const Matrix& x, std::span<const double> y, const FoldPlan& plan,
                       const std::vector<EffScoreCoef>& coef, std::span<const double> beta, double sigma2) {
  const std::size_t n = x.rows(), p = x.cols(), q = p + 1;
  PooledEquations eq{Vector(q, 0.0), Matrix(q, q), Matrix(q, q)};
  const double sigma = std::sqrt(sigma2), s3 = sigma2 * sigma, s4 = sigma2 * sigma2;
  Vector psi(q);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = x.row(i);
    const EffScoreCoef& c = coef[plan.fold[i]];
    const double e = (y[i] - dot(xi, beta)) / sigma;
    const double s = c.project(e), ds = c.b + 2.0 * c.c * e;
    const double qv = e * s, dq = s + e * ds;
    for (std::size_t j = 0; j < p; ++j) psi[j] = -xi[j] * s / sigma;
    psi[p] = -(1.0 + qv) / (2.0 * sigma2);
    for (std::size_t a = 0; a < q; ++a) {
      eq.value[a] += psi[a];
      for (std::size_t b = 0; b < q; ++b) eq.outer(a, b) += psi[a] * psi[b];
    }
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = 0; b < p; ++b) eq.jac(a, b) += xi[a] * xi[b] * ds / sigma2;
      eq.jac(a, p) += xi[a] * (ds * e + s) / (2.0 * s3);
      eq.jac(p, a) += xi[a] * dq / (2.0 * s3);
    }
    eq.jac(p, p) += dq * e / (4.0 * s4) + (1.0 + qv) / (2.0 * s4);
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : eq.value) v *= inv;
  eq.jac *= inv;
  eq.outer *= inv;
  return eq;
}

}  // namespace

SemiparamFit semiparam_linreg_fit(const Matrix& x, std::span<const double> y, std::size_t k,
                                  const SemiparamConfig& cfg, RngStream& rng) {
  require(x.rows() == y.size(), ErrorCode::DimensionMismatch, "semiparametric fit rows");
  const std::size_t n = x.rows(), p = x.cols();
  require(n > p + 1, ErrorCode::TooFewRows, "need more rows than parameters");
  const FoldPlan plan = fold_split(n, k, rng);

  SemiparamFit fit;
  fit.ols_beta = least_squares(x, y);
  double rss = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - dot(x.row(i), fit.ols_beta);
    rss += r * r;
    yy += y[i] * y[i];
  }
  if (rss <= 1e-24 * std::max(yy, 1.0)) {
    // Noiseless data: OLS already solves every estimating equation.
    fit.beta = fit.ols_beta;
    fit.se_beta.assign(p, 0.0);
    return fit;
  }

  fit.fold_coef.resize(k);
  for (std::size_t f = 0; f < k; ++f) {
    if (cfg.fixed_moments) {
      fit.fold_coef[f] = eff_coef_from_moments(cfg.fixed_moments->first, cfg.fixed_moments->second);
      continue;
    }
    const auto rows = plan.complement(f);
    Matrix xc(rows.size(), p);
    Vector yc(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(x.row(rows[i]).data(), p, xc.row(i).data());
      yc[i] = y[rows[i]];
    }
    const Vector bc = least_squares(xc, yc);
    Vector res(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) res[i] = yc[i] - dot(xc.row(i), bc);
    fit.fold_coef[f] = residual_eff_coeffs(res);
  }

  Vector theta(fit.ols_beta);
  theta.push_back(rss / static_cast<double>(n));
  const std::size_t q = p + 1;
  auto eval = [&](const Vector& th) {
    return pooled(x, y, plan, fit.fold_coef, std::span<const double>(th.data(), p), th[p]);
  };
  // Leading m x m block of the system (m = q: all equations; m = p: beta
  // equations at fixed sigma2).
  auto block = [](const PooledEquations& e, std::size_t m, Vector& v, Matrix& j) {
    v.assign(e.value.begin(), e.value.begin() + static_cast<std::ptrdiff_t>(m));
    j = Matrix(m, m);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b) j(a, b) = e.jac(a, b);
  };
  auto newton = [&](Vector th, std::size_t m) {
    PooledEquations eq = eval(th);
    Vector v;
    Matrix j;
    block(eq, m, v, j);
    double merit = norm2(v);
    // Backtracking along th - t * step; accepts the first decrease of ||Psi||.
    auto try_step = [&](const Vector& step) {
      double t = 1.0;
      for (int half = 0; half < 40; ++half, t *= 0.5) {
        Vector trial(th);
        for (std::size_t a = 0; a < m; ++a) trial[a] -= t * step[a];
        if (!(trial[p] > 0.0)) continue;
        PooledEquations te = eval(trial);
        Vector tv;
        Matrix tj;
        block(te, m, tv, tj);
        const double tm = norm2(tv);
        if (std::isfinite(tm) && tm < merit) {
          th = std::move(trial);
          eq = std::move(te);
          v = std::move(tv);
          j = std::move(tj);
          merit = tm;
          return true;
        }
      }
      return false;
    };
    for (std::size_t it = 0; it < cfg.newton_iters && merit > cfg.tol; ++it) {
      bool moved = false;
      try {
        moved = try_step(solve(j, v));
      } catch (const Error&) {
      }
      if (moved) continue;
      const Matrix jt = j.transpose();
      const Matrix jtj = jt * j;
      const Vector g = jt * v;
      for (double lambda = 1e-6; lambda <= 1e6 && !moved; lambda *= 10.0) {
        Matrix damped = jtj;
        for (std::size_t a = 0; a < m; ++a) damped(a, a) += lambda * std::max(jtj(a, a), 1e-12);
        try {
          moved = try_step(solve(damped, g));
        } catch (const Error&) {
        }
      }
      if (!moved) break;
    }
    return std::make_tuple(th, eq, merit);
  };

  auto [th, eq, merit] = newton(theta, q);
  std::size_t m = q;
  if (merit > 1e-9) {
    // The scale equation is a cubic in 1/sigma and loses its root when the
    // evaluation folds' third moment is far from the complements'. Keep the
    // OLS scale and solve the beta equations alone.
    std::tie(th, eq, merit) = newton(theta, p);
    require(merit <= 1e-9, ErrorCode::SingularDesign, "efficient-score equations have no root");
    fit.scale_fallback = true;
    m = p;
  }
  fit.beta.assign(th.begin(), th.begin() + static_cast<std::ptrdiff_t>(p));
  fit.sigma2 = th[p];

  // Sandwich J^{-1} V J^{-T} / n on the solved block.
  Vector v;
  Matrix j;
  block(eq, m, v, j);
  Matrix jinv(m, m);
  for (std::size_t c = 0; c < m; ++c) {
    Vector unit(m, 0.0);
    unit[c] = 1.0;
    Vector col;
    try {
      col = solve(j, unit);
    } catch (const Error&) {
      fail(ErrorCode::SingularDesign, "efficient-score Jacobian is singular");
    }
    for (std::size_t r = 0; r < m; ++r) jinv(r, c) = col[r];
  }
  Matrix outer(m, m);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) outer(a, b) = eq.outer(a, b);
  const Matrix cov = jinv * outer * jinv.transpose();
  fit.se_beta.resize(p);
  for (std::size_t a = 0; a < p; ++a) fit.se_beta[a] = std::sqrt(std::max(cov(a, a), 0.0) / static_cast<double>(n));
  if (m == q) {
    fit.se_sigma2 = std::sqrt(std::max(cov(p, p), 0.0) / static_cast<double>(n));
  } else {
    double m4 = 0.0;
    for (std::size_t i = 0; i < n; ++i) m4 += std::pow(y[i] - dot(x.row(i), fit.ols_beta), 4) / static_cast<double>(n);
    fit.se_sigma2 = std::sqrt(std::max(m4 - fit.sigma2 * fit.sigma2, 0.0) / static_cast<double>(n));
  }
  return fit;
}

// ---- Orthogonality ----

OrthogonalitySlope orthogonality_fd_check(const std::function<double(double)>& mean_moment,
                                          std::span<const double> eps_grid) {
  require(eps_grid.size() >= 3, ErrorCode::InvalidArgument, "need at least three grid points");
  Vector g(eps_grid.begin(), eps_grid.end());
  std::sort(g.begin(), g.end());
  const double scale = std::max(std::abs(g.front()), std::abs(g.back()));
  require(scale > 0.0, ErrorCode::InvalidArgument, "grid must contain nonzero steps");
  for (std::size_t i = 0; i < g.size(); ++i)
    require(std::abs(g[i] + g[g.size() - 1 - i]) <= 1e-12 * scale, ErrorCode::InvalidArgument,
            "grid must be symmetric around zero");
  Matrix design(g.size(), 3);
  Vector m(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = g[i];
    design(i, 2) = g[i] * g[i];
    m[i] = mean_moment(g[i]);
  }
  const Vector c = least_squares(design, m);
  return {c[1], c[2]};
}

double aipw_mean_moment(const CausalData& data, double psi, const Nuisance& nu) {
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += aipw_score(data.x.row(i), data.a[i], data.y[i], psi, nu);
  return s / static_cast<double>(data.size());
}

double gformula_moment(const CausalData& data, double psi, const Nuisance& nu) {
  return gformula_mean(data, nu.mu1) - gformula_mean(data, nu.mu0) - psi;
}

double ipw_moment(const CausalData& data, double psi, const Nuisance& nu) {
  const auto [m1, m0] = ipw_means(data, nu.e, nu.clip);
  return m1 - m0 - psi;
}

}  // namespace fmstat::inference
