#include "fmstat/scorematch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fmstat/linalg.hpp"

namespace fmstat::score {

Jvp finite_difference_jvp(Field f, double h) {
  return [f = std::move(f), h](std::span<const double> x, std::span<const double> v) {
    Vector up(x.begin(), x.end()), down(x.begin(), x.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
      up[i] += h * v[i];
      down[i] -= h * v[i];
    }
    Vector fu = f(up);
    const Vector fd = f(down);
    for (std::size_t i = 0; i < fu.size(); ++i) fu[i] = (fu[i] - fd[i]) / (2.0 * h);
    return fu;
  };
}

Jvp linear_jvp(Matrix a) {
  return [a = std::move(a)](std::span<const double>, std::span<const double> v) { return a * v; };
}

// ---- Quartic ----

double quartic_score(const QuarticTheta& th, double x) noexcept {
  return th.t1 + 2.0 * th.t2 * x + 4.0 * th.t3 * x * x * x;
}

double quartic_sm_objective(const QuarticTheta& th, std::span<const double> samples) {
  require(!samples.empty(), ErrorCode::EmptySample, "quartic objective needs samples");
  double total = 0.0;
  for (double x : samples) {
    const double s = quartic_score(th, x);
    total += 0.5 * s * s + 2.0 * th.t2 + 12.0 * th.t3 * x * x;
  }
  return total / static_cast<double>(samples.size());
}

QuarticTheta quartic_sm_fit(std::span<const double> samples) {
  require(!samples.empty(), ErrorCode::EmptySample, "quartic fit needs samples");
  // J(theta) = 1/2 theta^T M theta + b^T theta with phi(x) = (1, 2x, 4x^3).
  Matrix m(3, 3);
  Vector b(3, 0.0);
  for (double x : samples) {
    const double phi[3] = {1.0, 2.0 * x, 4.0 * x * x * x};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) += phi[i] * phi[j];
    b[1] += 2.0;
    b[2] += 12.0 * x * x;
  }
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  m *= inv_n;
  for (auto& v : b) v *= -inv_n;
  SpdFactor f;
  if (!try_cholesky(m, f)) fail(ErrorCode::SingularSystem, "moment matrix of the quartic model is singular");
  // Relative pivot floor alone misses near-rank-deficient samples; check conditioning too.
  double dmin = std::numeric_limits<double>::max(), dmax = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    dmin = std::min(dmin, f.lower(i, i));
    dmax = std::max(dmax, f.lower(i, i));
  }
  if (dmin < 1e-7 * dmax) fail(ErrorCode::SingularSystem, "moment matrix of the quartic model is singular");
  const Vector th = solve_spd(f, b);
  return {th[0], th[1], th[2]};
}

// ---- GGM ----

namespace {

void check_ggm(const Matrix& k, const Matrix& s) {
  require(s.square(), ErrorCode::NotSquare, "S must be square");
  require(k.rows() == s.rows() && k.cols() == s.cols(), ErrorCode::DimensionMismatch, "K and S dimensions");
}

double offdiag_l1(const Matrix& k) {
  double total = 0.0;
  for (std::size_t i = 0; i < k.rows(); ++i)
    for (std::size_t j = 0; j < k.cols(); ++j)
      if (i != j) total += std::abs(k(i, j));
  return total;
}

double soft(double v, double thr) noexcept {
  if (v > thr) return v - thr;
  if (v < -thr) return v + thr;
  return 0.0;
}

void soft_threshold_offdiag(Matrix& k, double thr) {
  if (thr <= 0.0) return;
  for (std::size_t i = 0; i < k.rows(); ++i)
    for (std::size_t j = 0; j < k.cols(); ++j)
      if (i != j) k(i, j) = soft(k(i, j), thr);
}

// sum_ij a_ij b_ij
double inner(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.data()[k] * b.data()[k];
  return s;
}

// For symmetric K and S, tr(KSK) = <KS, (KS)^T> ... = sum_ij (KS)_ij K_ji.
double sm_objective_from_ks(const Matrix& k, const Matrix& ks, const GgmProblem& p) {
  double quad = 0.0;
  for (std::size_t i = 0; i < k.rows(); ++i)
    for (std::size_t j = 0; j < k.cols(); ++j) quad += ks(i, j) * k(j, i);
  const double fro2 = inner(k, k);
  return 0.5 * quad - trace(k) + 0.5 * p.rho * fro2 + p.lambda * offdiag_l1(k);
}

double shift_to_positive(Matrix& k) {
  SpdFactor f;
  if (try_cholesky(k, f)) return 0.0;
  const double lmin = min_eigenvalue_sym(k);
  if (lmin > 0.0) return 0.0;
  const double shift = std::abs(lmin) + 1e-8;
  for (std::size_t i = 0; i < k.rows(); ++i) k(i, i) += shift;
  return shift;
}

}  // namespace

double ggm_sm_objective(const Matrix& k, const GgmProblem& p) {
  check_ggm(k, p.s);
  require(max_asymmetry(k) <= 1e-10 * std::max(1.0, max_abs(k)), ErrorCode::InvalidArgument, "K must be symmetric");
  return sm_objective_from_ks(k, k * p.s, p);
}

GgmEstimate ggm_sm_prox_fit(const GgmProblem& p) {
  require(p.s.square(), ErrorCode::NotSquare, "S must be square");
  require(p.lambda >= 0.0 && p.rho >= 0.0, ErrorCode::InvalidArgument, "lambda and rho must be non-negative");
  const std::size_t d = p.s.rows();
  const double lip = op_norm_sym_or_bound(p.s) + p.rho;
  require(lip > 0.0, ErrorCode::InvalidArgument, "S = 0 with rho = 0 has no minimiser");
  const double eta = 0.9 / lip;

  GgmEstimate est;
  Matrix k = Matrix::identity(d);
  for (std::size_t t = 0; t < p.max_iter; ++t) {
    // K is sparse after thresholding, and the gemm kernel skips zeros of its
    // left operand, so form KS and use SK = (KS)^T.
    const Matrix ks = k * p.s;
    est.objective.push_back(sm_objective_from_ks(k, ks, p));
    Matrix next(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double grad = 0.5 * (ks(i, j) + ks(j, i)) - (i == j ? 1.0 : 0.0) + p.rho * k(i, j);
        next(i, j) = k(i, j) - eta * grad;
      }
    soft_threshold_offdiag(next, eta * p.lambda);
    next = symmetrize(next);
    const double change = frobenius(next - k);
    k = std::move(next);
    est.iterations = t + 1;
    if (change < p.tol) break;
  }
  est.objective.push_back(sm_objective_from_ks(k, k * p.s, p));
  est.shift = shift_to_positive(k);
  est.k = std::move(k);
  return est;
}

double glasso_objective(const Matrix& k, const Matrix& s, double alpha) {
  check_ggm(k, s);
  SpdFactor f;
  if (!try_cholesky(k, f)) return std::numeric_limits<double>::infinity();
  return inner(s, k) - logdet_spd(f) + alpha * offdiag_l1(k);
}

GgmEstimate glasso_fit(const Matrix& s, double alpha, std::size_t iters, double tol) {
  require(s.square(), ErrorCode::NotSquare, "S must be square");
  require(alpha >= 0.0, ErrorCode::InvalidArgument, "alpha must be non-negative");
  const std::size_t d = s.rows();
  Matrix k(d, d);
  for (std::size_t i = 0; i < d; ++i) k(i, i) = 1.0 / std::max(s(i, i) + alpha, 1e-8);

  GgmEstimate est;
  SpdFactor fk = cholesky(k);
  double smooth = inner(s, k) - logdet_spd(fk);
  est.objective.push_back(smooth + alpha * offdiag_l1(k));
  double step = 1.0;
  for (std::size_t t = 0; t < iters; ++t) {
    Matrix grad = s - inverse_spd(fk);
    Matrix trial;
    SpdFactor ft;
    double trial_smooth = 0.0;
    double change = 0.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings, step *= 0.5) {
      trial = k - grad * step;
      soft_threshold_offdiag(trial, step * alpha);
      trial = symmetrize(trial);
      if (!try_cholesky(trial, ft)) continue;
      trial_smooth = inner(s, trial) - logdet_spd(ft);
      const Matrix delta = trial - k;
      change = frobenius(delta);
      const double model = smooth + inner(grad, delta) + change * change / (2.0 * step);
      // The second test guards against rounding once the steps become tiny.
      if (trial_smooth <= model + 1e-12 * std::abs(smooth) &&
          trial_smooth + alpha * offdiag_l1(trial) <= est.objective.back()) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    k = std::move(trial);
    fk = std::move(ft);
    smooth = trial_smooth;
    est.objective.push_back(smooth + alpha * offdiag_l1(k));
    est.iterations = t + 1;
    step *= 2.0;
    if (change < tol) break;
  }
  est.k = std::move(k);
  return est;
}

// ---- Stein-type checks ----

double hutchinson_divergence(const Jvp& jvp, std::span<const double> x, std::size_t probes, RngStream& rng) {
  require(probes >= 1, ErrorCode::InvalidArgument, "need at least one probe");
  Vector eps(x.size());
  double total = 0.0;
  for (std::size_t p = 0; p < probes; ++p) {
    for (auto& e : eps) e = rng.rademacher();
    total += dot(eps, jvp(x, eps));
  }
  return total / static_cast<double>(probes);
}

double hutchinson_divergence(const Field& f, std::span<const double> x, std::size_t probes, RngStream& rng) {
  return hutchinson_divergence(finite_difference_jvp(f), x, probes, rng);
}

double fd_divergence(const Field& f, std::span<const double> x, double h) {
  Vector p(x.begin(), x.end());
  double div = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const double up = f(p)[i];
    p[i] = x[i] - h;
    const double down = f(p)[i];
    p[i] = x[i];
    div += (up - down) / (2.0 * h);
  }
  return div;
}

namespace {

MeanSe mean_se(const Vector& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double var = v.size() > 1 ? ss / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

}  // namespace

MeanSe stein_residual(const Field& score, const Field& f, const Matrix& samples) {
  require(samples.rows() > 0, ErrorCode::EmptySample, "stein residual needs samples");
  Vector terms(samples.rows());
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const auto x = samples.row(i);
    terms[i] = dot(score(x), f(x)) + fd_divergence(f, x);
  }
  return mean_se(terms);
}

Shrinkage james_stein_shrinkage(std::size_t d) {
  const double c = static_cast<double>(d) - 2.0;
  Shrinkage g;
  g.value = [c](std::span<const double> x) {
    const double r2 = dot(x, x);
    Vector out(x.begin(), x.end());
    for (auto& v : out) v *= -c / r2;
    return out;
  };
  // div(x / |x|^2) = (d - 2) / |x|^2
  g.divergence = [c](std::span<const double> x) { return -c * c / dot(x, x); };
  return g;
}

Shrinkage zero_shrinkage() {
  Shrinkage g;
  g.value = [](std::span<const double> x) { return Vector(x.size(), 0.0); };
  g.divergence = [](std::span<const double>) { return 0.0; };
  return g;
}

double RiskEstimate::combined_se() const { return std::sqrt(se_direct * se_direct + se_stein * se_stein); }

RiskEstimate james_stein_risk(std::span<const double> mu, std::size_t n_mc, RngStream& rng, const Shrinkage* g) {
  const std::size_t d = mu.size();
  require(d >= 3, ErrorCode::DimensionTooSmall, "James-Stein risk needs d >= 3");
  require(n_mc >= 2, ErrorCode::InvalidArgument, "need at least two Monte Carlo draws");
  const Shrinkage js = james_stein_shrinkage(d);
  const Shrinkage& shrink = g ? *g : js;
  Vector direct(n_mc), stein(n_mc), x(d);
  for (std::size_t r = 0; r < n_mc; ++r) {
    for (std::size_t i = 0; i < d; ++i) x[i] = mu[i] + rng.normal();
    const Vector gx = shrink.value(x);
    double err = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double e = x[i] + gx[i] - mu[i];
      err += e * e;
    }
    direct[r] = err;
    stein[r] = static_cast<double>(d) + 2.0 * shrink.divergence(x) + dot(gx, gx);
  }
  const MeanSe a = mean_se(direct), b = mean_se(stein);
  return {a.mean, a.se, b.mean, b.se};
}

// ---- DSM ----

DsmResult dsm_fit(const Matrix& samples, double sigma, const nn::TrainConfig& cfg, RngStream& rng) {
  require(sigma > 0.0, ErrorCode::InvalidArgument, "DSM noise level must be positive");
  require(samples.rows() > 0, ErrorCode::EmptySample, "DSM needs samples");
  cfg.validate();
  const std::size_t n = samples.rows(), d = samples.cols();
  std::vector<std::size_t> sizes{d};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(d);
  DsmResult out{nn::Mlp(sizes, cfg.activation, rng), 0.0, 0.0};
  const std::size_t bs = std::min(cfg.batch_size, n);
  nn::Trainer trainer(out.model, cfg, cfg.epochs * ((n + bs - 1) / bs));

  const double inv_s2 = 1.0 / (sigma * sigma);
  auto noisy_batch = [&](std::span<const std::size_t> rows, Matrix& y, Matrix& target) {
    y = Matrix(rows.size(), d);
    target = Matrix(rows.size(), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto x = samples.row(rows[r]);
      for (std::size_t j = 0; j < d; ++j) {
        const double yj = x[j] + sigma * rng.normal();
        y(r, j) = yj;
        target(r, j) = (x[j] - yj) * inv_s2;
      }
    }
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Matrix y, target;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      noisy_batch(std::span(order).subspan(start, end - start), y, target);
      trainer.step(y, target);
    }
  }

  const std::size_t n_val = std::max<std::size_t>(n, 2000);
  std::vector<std::size_t> val_rows(n_val);
  for (std::size_t i = 0; i < n_val; ++i) val_rows[i] = i % n;
  noisy_batch(val_rows, y, target);
  const Matrix pred = out.model.forward_batch(y);
  Vector col_mean(d, 0.0);
  for (std::size_t r = 0; r < n_val; ++r)
    for (std::size_t j = 0; j < d; ++j) col_mean[j] += target(r, j) / static_cast<double>(n_val);
  for (std::size_t r = 0; r < n_val; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      out.validation_loss += std::pow(pred(r, j) - target(r, j), 2);
      out.baseline_loss += std::pow(col_mean[j] - target(r, j), 2);
    }
  out.validation_loss /= static_cast<double>(n_val);
  out.baseline_loss /= static_cast<double>(n_val);
  return out;
}

}  // namespace fmstat::score
