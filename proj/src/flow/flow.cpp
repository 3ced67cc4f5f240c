#include "fmstat/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "fmstat/kernels.hpp"
#include "fmstat/linalg.hpp"
#include "fmstat/scorematch.hpp"

namespace fmstat::flow {

namespace {

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double log_sum_exp(const Vector& z) {
  const double m = *std::max_element(z.begin(), z.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

PathSample linear_path(std::span<const double> x0, std::span<const double> x1, double t) {
  require(x0.size() == x1.size(), ErrorCode::DimensionMismatch, "path endpoints differ in dimension");
  require(t >= 0.0 && t <= 1.0, ErrorCode::OutOfUnitInterval, "path time must lie in [0, 1]");
  PathSample s{t, Vector(x0.size()), Vector(x0.size()), Vector(x0.begin(), x0.end()), Vector(x1.begin(), x1.end())};
  for (std::size_t i = 0; i < x0.size(); ++i) {
    s.xt[i] = (1.0 - t) * x0[i] + t * x1[i];
    s.u[i] = x1[i] - x0[i];
  }
  return s;
}

// ---- Couplings ----

std::string to_string(CouplingKind k) {
  switch (k) {
    case CouplingKind::Independent: return "independent";
    case CouplingKind::Assignment: return "assignment";
    case CouplingKind::Entropic: return "entropic";
  }
  return "independent";
}

CouplingKind coupling_from_string(const std::string& s) {
  if (s == "independent") return CouplingKind::Independent;
  if (s == "assignment" || s == "ot") return CouplingKind::Assignment;
  if (s == "entropic" || s == "sinkhorn") return CouplingKind::Entropic;
  fail(ErrorCode::InvalidArgument, "unknown coupling '" + s + "'");
}

double CouplingPlan::cost(const Matrix& c) const {
  double total = 0.0;
  if (permutation) {
    for (std::size_t i = 0; i < permutation->size(); ++i) total += c(i, (*permutation)[i]);
  } else if (plan) {
    for (std::size_t k = 0; k < c.size(); ++k) total += plan->data()[k] * c.data()[k];
  }
  return total;
}

CouplingPlan ot_assignment(const Matrix& c) {
  require(c.square(), ErrorCode::NotSquare, "assignment cost must be square");
  const std::size_t m = c.rows();
  require(m <= 256, ErrorCode::InvalidArgument, "exact assignment is limited to m <= 256; use sinkhorn");
  // 1-based potentials u (rows), v (columns); match[j] is the row on column j.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= m; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  CouplingPlan plan{CouplingKind::Assignment, std::vector<std::size_t>(m), std::nullopt};
  for (std::size_t j = 1; j <= m; ++j) (*plan.permutation)[match[j] - 1] = j - 1;
  return plan;
}

CouplingPlan sinkhorn(const Matrix& c, double eps, std::size_t iters) {
  require(c.square(), ErrorCode::NotSquare, "sinkhorn cost must be square");
  require(eps > 0.0, ErrorCode::InvalidArgument, "sinkhorn eps must be positive");
  const std::size_t m = c.rows();
  require(m > 0, ErrorCode::EmptyInput, "empty cost matrix");
  const double target = 1.0 / static_cast<double>(m);
  const double log_a = std::log(target);
  Vector f(m, 0.0), g(m, 0.0), z(m);
  auto row_violation = [&] {
    double worst = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += std::exp((f[i] + g[j] - c(i, j)) / eps);
      worst = std::max(worst, std::abs(s - target));
    }
    return worst;
  };
  double violation = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) z[j] = (g[j] - c(i, j)) / eps;
      f[i] = eps * (log_a - log_sum_exp(z));
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < m; ++i) z[i] = (f[i] - c(i, j)) / eps;
      g[j] = eps * (log_a - log_sum_exp(z));
    }
    if (it % 5 == 4 || it + 1 == iters) {
      violation = row_violation();
      if (violation < 1e-13) break;
    }
  }
  if (!(violation <= 1e-6))
    fail(ErrorCode::NoConvergence, "sinkhorn marginals did not converge; increase eps or iterations");

  Matrix p(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) p(i, j) = std::exp((f[i] + g[j] - c(i, j)) / eps);
  // Round onto the exact marginals: shrink rows, then columns, then spread the
  // remaining deficit as a rank-one correction.
  Vector row(m, 0.0), col(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += p(i, j);
    const double scale = s > target ? target / s : 1.0;
    for (std::size_t j = 0; j < m; ++j) p(i, j) *= scale;
  }
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += p(i, j);
    const double scale = s > target ? target / s : 1.0;
    for (std::size_t i = 0; i < m; ++i) p(i, j) *= scale;
  }
  double deficit = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      row[i] += p(i, j);
      col[j] += p(i, j);
    }
  for (std::size_t i = 0; i < m; ++i) {
    row[i] = std::max(0.0, target - row[i]);
    col[i] = std::max(0.0, target - col[i]);
    deficit += row[i];
  }
  if (deficit > 0.0)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) p(i, j) += row[i] * col[j] / deficit;
  return {CouplingKind::Entropic, std::nullopt, std::move(p)};
}

Matrix pairing_cost(const Matrix& x1, const Matrix& x0) {
  require(x1.cols() == x0.cols(), ErrorCode::DimensionMismatch, "pairing batches differ in dimension");
  return kernels::parallel::pairwise_sq_dist(x1, x0);
}

Matrix pair_minibatch(const Matrix& x1, const Matrix& x0, CouplingKind kind, RngStream& rng, double sinkhorn_eps) {
  require(x1.rows() == x0.rows(), ErrorCode::DimensionMismatch, "pairing batches differ in size");
  if (kind == CouplingKind::Independent) return x0;
  const std::size_t m = x1.rows(), d = x0.cols();
  const Matrix c = pairing_cost(x1, x0);
  std::vector<std::size_t> partner(m);
  if (kind == CouplingKind::Assignment) {
    partner = *ot_assignment(c).permutation;
  } else {
    // Scale eps with the typical cost so the plan is neither uniform nor stiff.
    double mean_cost = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) mean_cost += c.data()[k] / static_cast<double>(c.size());
    const Matrix p = *sinkhorn(c, sinkhorn_eps * std::max(mean_cost, 1e-12)).plan;
    for (std::size_t i = 0; i < m; ++i) {
      double u = rng.uniform() / static_cast<double>(m), acc = 0.0;
      std::size_t j = 0;
      for (; j + 1 < m; ++j) {
        acc += p(i, j);
        if (u < acc) break;
      }
      partner[i] = j;
    }
  }
  Matrix out(m, d);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x0.row(partner[i]).data(), d, out.row(i).data());
  return out;
}

// ---- Flow model ----

FlowModel::FlowModel(nn::Mlp net, std::size_t state_dim, std::size_t cond_dim)
    : net_(std::move(net)), state_dim_(state_dim), cond_dim_(cond_dim) {
  require(net_.input_dim() == kTimeFeatures + state_dim + cond_dim, ErrorCode::DimensionMismatch,
          "flow network input width");
  require(net_.output_dim() == state_dim, ErrorCode::DimensionMismatch, "flow network output width");
}

Matrix flow_features(std::span<const double> t, const Matrix& x, const Matrix& c) {
  const std::size_t n = x.rows();
  require(t.size() == n, ErrorCode::DimensionMismatch, "one time per row");
  require(c.empty() || c.rows() == n, ErrorCode::DimensionMismatch, "one condition per row");
  const std::size_t cw = c.empty() ? 0 : c.cols();
  Matrix f(n, FlowModel::kTimeFeatures + x.cols() + cw);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = f.row(i);
    r[0] = t[i];
    r[1] = std::sin(2.0 * std::numbers::pi * t[i]);
    r[2] = std::cos(2.0 * std::numbers::pi * t[i]);
    std::copy_n(x.row(i).data(), x.cols(), r.data() + FlowModel::kTimeFeatures);
    if (cw) std::copy_n(c.row(i).data(), cw, r.data() + FlowModel::kTimeFeatures + x.cols());
  }
  return f;
}

Vector FlowModel::velocity(double t, std::span<const double> x, std::span<const double> c) const {
  require(x.size() == state_dim_ && c.size() == cond_dim_, ErrorCode::DimensionMismatch, "flow state/condition size");
  Matrix xm(1, x.size(), Vector(x.begin(), x.end()));
  Matrix cm = c.empty() ? Matrix() : Matrix(1, c.size(), Vector(c.begin(), c.end()));
  const double ts[1] = {t};
  return net_.forward_batch(flow_features(ts, xm, cm)).values();
}

Matrix FlowModel::velocity_batch(double t, const Matrix& x, const Matrix& c) const {
  require(x.cols() == state_dim_, ErrorCode::DimensionMismatch, "flow state width");
  require(cond_dim_ == 0 ? c.empty() : c.cols() == cond_dim_, ErrorCode::DimensionMismatch, "flow condition width");
  const Vector ts(x.rows(), t);
  return net_.forward_batch(flow_features(ts, x, c));
}

VelocityFn FlowModel::field(Vector c) const {
  return [this, c = std::move(c)](double t, std::span<const double> x) { return velocity(t, x, c); };
}

namespace {

CfmResult train_flow(const Matrix* cond, const Matrix& data, const CfmConfig& cfg, RngStream& rng) {
  require(data.rows() > 0, ErrorCode::EmptyInput, "flow training data is empty");
  require(cfg.t_max > 0.0 && cfg.t_max <= 1.0, ErrorCode::InvalidArgument, "t_max must lie in (0, 1]");
  require(cfg.path_noise >= 0.0, ErrorCode::InvalidArgument, "path noise must be non-negative");
  cfg.train.validate();
  const std::size_t n = data.rows(), d = data.cols();
  const std::size_t cw = cond ? cond->cols() : 0;
  if (cond) require(cond->rows() == n, ErrorCode::DimensionMismatch, "one condition per data row");

  std::vector<std::size_t> sizes{FlowModel::kTimeFeatures + d + cw};
  sizes.insert(sizes.end(), cfg.train.hidden.begin(), cfg.train.hidden.end());
  sizes.push_back(d);
  CfmResult out{FlowModel(nn::Mlp(sizes, cfg.train.activation, rng), d, cw), 0.0, {}};
  const std::size_t bs = std::min(cfg.train.batch_size, n);
  nn::Trainer trainer(out.model.net(), cfg.train, cfg.train.epochs * ((n + bs - 1) / bs));

  const CouplingKind kind = cond ? CouplingKind::Independent : cfg.coupling;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t m = std::min(n, start + bs) - start;
      Matrix x1(m, d), x0(m, d), cb = cond ? Matrix(m, cw) : Matrix();
      for (std::size_t r = 0; r < m; ++r) {
        std::copy_n(data.row(order[start + r]).data(), d, x1.row(r).data());
        if (cond) std::copy_n(cond->row(order[start + r]).data(), cw, cb.row(r).data());
        for (std::size_t j = 0; j < d; ++j) x0(r, j) = rng.normal();
      }
      x0 = pair_minibatch(x1, x0, kind, rng, cfg.sinkhorn_eps);
      Vector t(m);
      Matrix xt(m, d), u(m, d);
      for (std::size_t r = 0; r < m; ++r) {
        t[r] = rng.uniform(0.0, cfg.t_max);
        const double bridge = cfg.path_noise * std::sqrt(t[r] * (1.0 - t[r]));
        for (std::size_t j = 0; j < d; ++j) {
          xt(r, j) = (1.0 - t[r]) * x0(r, j) + t[r] * x1(r, j);
          if (bridge > 0.0) xt(r, j) += bridge * rng.normal();
          u(r, j) = x1(r, j) - x0(r, j);
        }
      }
      const double loss = trainer.step(flow_features(t, xt, cb), u);
      if (trainer.steps_taken() == 1) out.initial_loss = loss;
      total += loss * static_cast<double>(m);
    }
    out.epoch_loss.push_back(total / static_cast<double>(n));
  }
  return out;
}

// Generic fixed-grid integrator for y' = F(t, y).
template <class F>
Vector integrate(F&& rhs, Vector y, const OdeConfig& cfg, std::vector<double>* times = nullptr,
                 std::vector<Vector>* states = nullptr) {
  cfg.validate();
  const std::size_t k_steps = cfg.steps;
  const bool fwd = cfg.direction == Direction::Forward;
  const double h = (fwd ? 1.0 : -1.0) / static_cast<double>(k_steps);
  auto record = [&](double t) {
    if (times) times->push_back(t);
    if (states) states->push_back(y);
  };
  auto axpy = [](const Vector& a, double s, const Vector& b) {
    Vector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + s * b[i];
    return r;
  };
  record(fwd ? 0.0 : 1.0);
  for (std::size_t k = 0; k < k_steps; ++k) {
    const double t = fwd ? static_cast<double>(k) / static_cast<double>(k_steps)
                         : static_cast<double>(k_steps - k) / static_cast<double>(k_steps);
    if (cfg.scheme == Scheme::Euler) {
      const Vector k1 = rhs(t, y);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += h * k1[i];
    } else {
      const Vector k1 = rhs(t, y);
      const Vector k2 = rhs(t + 0.5 * h, axpy(y, 0.5 * h, k1));
      const Vector k3 = rhs(t + 0.5 * h, axpy(y, 0.5 * h, k2));
      const Vector k4 = rhs(t + h, axpy(y, h, k3));
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if (!finite(y)) fail(ErrorCode::NonFinite, "ODE state became non-finite");
    const double t_next = fwd ? static_cast<double>(k + 1) / static_cast<double>(k_steps)
                              : static_cast<double>(k_steps - k - 1) / static_cast<double>(k_steps);
    record(t_next);
  }
  return y;
}

}  // namespace

CfmResult cfm_train(const Matrix& data, const CfmConfig& cfg, RngStream& rng) {
  return train_flow(nullptr, data, cfg, rng);
}

CfmResult conditional_cfm_train(const Matrix& cond, const Matrix& y, const CfmConfig& cfg, RngStream& rng) {
  return train_flow(&cond, y, cfg, rng);
}

// ---- ODE / SDE ----

std::string to_string(Scheme s) { return s == Scheme::Euler ? "euler" : "rk4"; }

Scheme scheme_from_string(const std::string& s) {
  if (s == "euler") return Scheme::Euler;
  if (s == "rk4") return Scheme::Rk4;
  fail(ErrorCode::InvalidArgument, "unknown ODE scheme '" + s + "'");
}

void OdeConfig::validate() const { require(steps >= 1, ErrorCode::InvalidArgument, "ODE needs at least one step"); }

Vector ode_integrate(const VelocityFn& v, std::span<const double> x0, const OdeConfig& cfg) {
  return integrate([&](double t, const Vector& y) { return v(t, y); }, Vector(x0.begin(), x0.end()), cfg);
}

Trajectory ode_trajectory(const VelocityFn& v, std::span<const double> x0, const OdeConfig& cfg) {
  std::vector<double> times;
  std::vector<Vector> states;
  integrate([&](double t, const Vector& y) { return v(t, y); }, Vector(x0.begin(), x0.end()), cfg, &times, &states);
  Trajectory tr{std::move(times), Matrix(states.size(), x0.size())};
  for (std::size_t k = 0; k < states.size(); ++k) std::copy(states[k].begin(), states[k].end(), tr.x.row(k).begin());
  return tr;
}

Matrix flow_sample(const FlowModel& model, const Matrix& x0, const Matrix& cond, const OdeConfig& cfg) {
  const std::size_t n = x0.rows(), d = x0.cols();
  auto rhs = [&](double t, const Vector& y) { return model.velocity_batch(t, Matrix(n, d, y), cond).values(); };
  return Matrix(n, d, integrate(rhs, x0.values(), cfg));
}

Matrix flow_generate(const FlowModel& model, std::size_t n, const Matrix& cond, const OdeConfig& cfg, RngStream& rng) {
  Matrix x0(n, model.state_dim());
  for (std::size_t k = 0; k < x0.size(); ++k) x0.data()[k] = rng.normal();
  return flow_sample(model, x0, cond, cfg);
}

DivergenceFn linear_divergence(const Matrix& a) {
  require(a.square(), ErrorCode::NotSquare, "linear field matrix must be square");
  const double tr = trace(a);
  return [tr](double, std::span<const double>) { return tr; };
}

DivergenceFn hutchinson_divergence_fn(VelocityFn v, std::size_t probes, RngStream& rng) {
  return [v = std::move(v), probes, &rng](double t, std::span<const double> x) {
    const score::Field at_t = [&v, t](std::span<const double> z) { return v(t, z); };
    return score::hutchinson_divergence(at_t, x, probes, rng);
  };
}

TransportedDensity logdensity_along_flow(const VelocityFn& v, const DivergenceFn& div, std::span<const double> x0,
                                         double log_rho0, const OdeConfig& cfg) {
  const std::size_t d = x0.size();
  Vector y(x0.begin(), x0.end());
  y.push_back(log_rho0);
  auto rhs = [&](double t, const Vector& s) {
    const std::span<const double> x(s.data(), d);
    Vector out = v(t, x);
    out.push_back(-div(t, x));
    return out;
  };
  Vector end = integrate(rhs, std::move(y), cfg);
  const double lr = end.back();
  end.pop_back();
  return {std::move(end), lr};
}

GaussianMoments gaussian_pushforward(const Matrix& a, std::span<const double> mu0, const Matrix& sigma0, double t) {
  require(a.square() && a.rows() == mu0.size() && sigma0.rows() == mu0.size(), ErrorCode::DimensionMismatch,
          "pushforward dimensions");
  cholesky(sigma0);
  const Matrix e = matrix_exp(a, t);
  return {e * mu0, symmetrize(e * sigma0 * e.transpose())};
}

GaussianMoments ou_moments(const Matrix& a, const Matrix& d, std::span<const double> mu0, const Matrix& sigma0, double t,
                           std::size_t steps) {
  require(steps >= 1, ErrorCode::InvalidArgument, "need at least one step");
  require(a.square() && d.rows() == a.rows() && sigma0.rows() == a.rows() && mu0.size() == a.rows(),
          ErrorCode::DimensionMismatch, "moment ODE dimensions");
  const double h = t / static_cast<double>(steps);
  const Matrix at = a.transpose();
  auto dmu = [&](const Vector& m) { return a * m; };
  auto dsig = [&](const Matrix& s) { return a * s + s * at + d; };
  auto vadd = [](const Vector& x, double c, const Vector& y) {
    Vector r(x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += c * y[i];
    return r;
  };
  Vector mu(mu0.begin(), mu0.end());
  Matrix sig = sigma0;
  for (std::size_t k = 0; k < steps; ++k) {
    const Vector m1 = dmu(mu), m2 = dmu(vadd(mu, 0.5 * h, m1)), m3 = dmu(vadd(mu, 0.5 * h, m2)),
                 m4 = dmu(vadd(mu, h, m3));
    const Matrix s1 = dsig(sig), s2 = dsig(sig + s1 * (0.5 * h)), s3 = dsig(sig + s2 * (0.5 * h)),
                 s4 = dsig(sig + s3 * h);
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += h / 6.0 * (m1[i] + 2.0 * m2[i] + 2.0 * m3[i] + m4[i]);
    sig += (s1 + s2 * 2.0 + s3 * 2.0 + s4) * (h / 6.0);
  }
  return {std::move(mu), symmetrize(sig)};
}

Vector euler_maruyama(const VelocityFn& f, const std::function<double(double)>& g, std::span<const double> x0,
                      std::size_t steps, RngStream& rng) {
  require(steps >= 1, ErrorCode::InvalidArgument, "need at least one step");
  const double dt = 1.0 / static_cast<double>(steps), sq = std::sqrt(dt);
  Vector x(x0.begin(), x0.end());
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const Vector drift = f(t, x);
    const double diff = g(t);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += drift[i] * dt + diff * sq * rng.normal();
    if (!finite(x)) fail(ErrorCode::NonFinite, "SDE state became non-finite");
  }
  return x;
}

VelocityFn probability_flow_velocity(VelocityFn f, double g, VelocityFn score) {
  const double c = 0.5 * g * g;
  return [f = std::move(f), score = std::move(score), c](double t, std::span<const double> x) {
    Vector v = f(t, x);
    if (c != 0.0) {
      const Vector s = score(t, x);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * s[i];
    }
    return v;
  };
}

double sensitivity_ratio(const VelocityFn& v, std::span<const double> x0, double delta, const OdeConfig& cfg,
                         std::size_t probes, RngStream& rng) {
  require(delta > 0.0, ErrorCode::InvalidArgument, "perturbation size must be positive");
  require(probes >= 1, ErrorCode::InvalidArgument, "need at least one probe");
  const Vector base = ode_integrate(v, x0, cfg);
  double worst = 0.0;
  Vector dir(x0.size()), x(x0.size());
  for (std::size_t p = 0; p < probes; ++p) {
    double nrm = 0.0;
    while (nrm == 0.0) {
      for (auto& e : dir) e = rng.normal();
      nrm = norm2(dir);
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] + delta * dir[i] / nrm;
    const Vector moved = ode_integrate(v, x, cfg);
    worst = std::max(worst, std::sqrt(squared_distance(moved, base)) / delta);
  }
  return worst;
}

}  // namespace fmstat::flow
