#include <algorithm>
#include <cmath>
#include <tuple>

#include "fmstat/diagnostics.hpp"
#include "fmstat/error.hpp"
#include "fmstat/experiments.hpp"

namespace fmstat::experiments {

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

// ---- DDML coverage ----

bool DrCheck::within_3se() const { return std::abs(psi - truth) < 3.0 * se; }

inference::CausalData observational_data(std::size_t n, double noise, RngStream& rng) {
  const auto truth = observational_truth();
  inference::CausalData d{Matrix(n, 2), Vector(n), Vector(n)};
  for (std::size_t i = 0; i < n; ++i) {
    auto x = d.x.row(i);
    x[0] = rng.normal();
    x[1] = rng.normal();
    d.a[i] = rng.bernoulli(truth.e(x)) ? 1.0 : 0.0;
    d.y[i] = (d.a[i] == 1.0 ? truth.mu1(x) : truth.mu0(x)) + noise * rng.normal();
  }
  return d;
}

inference::Nuisance observational_truth() {
  inference::Nuisance nu;
  nu.mu0 = [](std::span<const double> x) { return x[0] + 0.5 * x[1]; };
  nu.mu1 = [](std::span<const double> x) { return x[0] + 0.5 * x[1] + 1.0 + 0.5 * x[0]; };
  nu.e = [](std::span<const double> x) { return sigmoid(0.5 * x[0] - 0.5 * x[1]); };
  return nu;
}

AteStudyResult ate_study(const AteStudyConfig& cfg, RngStream& rng) {
  require(cfg.reps >= 1, ErrorCode::InvalidArgument, "ate_study: reps must be positive");
  AteStudyResult out;
  std::size_t covered = 0;
  for (std::size_t r = 0; r < cfg.reps; ++r) {
    RngStream rr = rng.child(r);
    inference::CausalData d{Matrix(cfg.n, 2), Vector(cfg.n), Vector(cfg.n)};
    for (std::size_t i = 0; i < cfg.n; ++i) {
      d.x(i, 0) = rr.normal();
      d.x(i, 1) = rr.normal();
      d.a[i] = rr.bernoulli(0.5) ? 1.0 : 0.0;
      d.y[i] = 0.8 * d.x(i, 0) - 0.4 * d.x(i, 1) + cfg.tau * d.a[i] + rr.normal();
    }
    const auto rep = inference::ate_crossfit(d, cfg.folds, inference::linear_learner(), cfg.clip, rr);
    AteStudyRow row{r, rep.psi, rep.se, rep.lo, rep.hi, rep.lo <= cfg.tau && cfg.tau <= rep.hi};
    covered += row.covered ? 1 : 0;
    out.rows.push_back(row);
  }
  out.coverage = static_cast<double>(covered) / static_cast<double>(cfg.reps);

  using inference::OutcomeModel;
  using inference::PropensityModel;
  RngStream dr_rng = rng.child(cfg.reps);
  const auto d = observational_data(cfg.dr_n, 1.0, dr_rng);
  const struct {
    const char* name;
    OutcomeModel o;
    PropensityModel p;
  } cases[] = {{"mu_wrong", OutcomeModel::Zero, PropensityModel::Logistic},
               {"e_wrong", OutcomeModel::Linear, PropensityModel::Constant},
               {"both_wrong", OutcomeModel::Zero, PropensityModel::Constant}};
  for (const auto& c : cases) {
    const auto rep = inference::ate_crossfit(d, cfg.folds, inference::linear_learner(c.o, c.p), cfg.clip, dr_rng);
    out.dr.push_back({c.name, rep.psi, rep.se, 1.0});
  }
  return out;
}

std::vector<OrthogonalityRow> orthogonality_contrast(std::size_t n, RngStream& rng) {
  const auto d = observational_data(n, 1.0, rng);
  const auto base = observational_truth();
  const Vector grid{-0.1, -0.05, 0.0, 0.05, 0.1};
  const double psi = 1.0;
  const auto h = [](std::span<const double> x) { return 1.0 + x[0]; };
  const auto he = [](std::span<const double> x) { return 0.2 * std::tanh(x[1]); };
  struct Dir {
    const char* name;
    bool outcome;
    std::function<inference::Nuisance(double)> perturb;
  };
  const std::vector<Dir> dirs{
      {"mu1", true,
       [&](double e) {
         auto nu = base;
         nu.mu1 = [=](std::span<const double> x) { return base.mu1(x) + e * h(x); };
         return nu;
       }},
      {"mu0", true,
       [&](double e) {
         auto nu = base;
         nu.mu0 = [=](std::span<const double> x) { return base.mu0(x) + e * h(x); };
         return nu;
       }},
      {"e_tanh", false,
       [&](double e) {
         auto nu = base;
         nu.e = [=](std::span<const double> x) { return base.e(x) + e * he(x); };
         return nu;
       }},
      {"e_abs", false,
       [&](double e) {
         auto nu = base;
         nu.e = [=](std::span<const double> x) { return base.e(x) - e * std::abs(he(x)); };
         return nu;
       }},
  };
  std::vector<OrthogonalityRow> out;
  for (const auto& dir : dirs) {
    OrthogonalityRow row;
    row.direction = dir.name;
    row.aipw_slope = inference::orthogonality_fd_check(
                         [&](double e) { return inference::aipw_mean_moment(d, psi, dir.perturb(e)); }, grid)
                         .linear;
    row.naive_slope = inference::orthogonality_fd_check(
                          [&](double e) {
                            const auto nu = dir.perturb(e);
                            return dir.outcome ? inference::gformula_moment(d, psi, nu)
                                               : inference::ipw_moment(d, psi, nu);
                          },
                          grid)
                          .linear;
    out.push_back(row);
  }
  return out;
}

// ---- Interventional-distribution demo ----

double CausalDgp::f(std::span<const double> x) const {
  return std::sin(1.2 * x[0]) + 0.6 * (x[1] * x[1] - 1.0) + 0.5 * x[2] * x[3] + 0.3 * std::cos(x[4] * x[5]) -
         0.2 * x[6] + 0.15 * std::sin(x[7] + x[8]);
}

double CausalDgp::tau(std::span<const double> x) const { return 1.0 + 0.5 * std::sin(x[0]) + 0.3 * x[1] * x[1]; }

double CausalDgp::scale(std::span<const double> x, double a) const {
  return (0.7 + 0.25 * sigmoid(0.9 * x[1] - 0.6 * x[2]) + 0.15 * std::abs(x[3])) * std::exp(0.25 * kappa * a);
}

double CausalDgp::tail_prob(std::span<const double> x, double a) const {
  return sigmoid(0.9 * x[0] - 0.7 * x[1] + 0.3 * std::sin(x[2]) + 1.4 * kappa * a);
}

double CausalDgp::propensity(std::span<const double> x) const {
  return sigmoid(0.4 * x[0] - 0.3 * x[1] + 0.2 * x[2]);
}

double CausalDgp::noise(std::span<const double> x, double a, RngStream& rng) const {
  const bool z = rng.bernoulli(tail_prob(x, a));
  const double xi = rng.normal();
  const double u = rng.exponential() - 1.0;
  return 0.75 * xi + (0.15 + (z ? 0.9 : 0.0)) * u;
}

double CausalDgp::outcome(std::span<const double> x, double a, RngStream& rng) const {
  return f(x) + tau(x) * a + scale(x, a) * noise(x, a, rng);
}

Matrix CausalDgp::draw_x(std::size_t n, RngStream& rng) const {
  require(d >= 9, ErrorCode::DimensionTooSmall, "causal DGP needs d >= 9");
  Matrix x(n, d);
  for (std::size_t k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
  return x;
}

inference::CausalData CausalDgp::draw(std::size_t n, RngStream& rng) const {
  inference::CausalData data{draw_x(n, rng), Vector(n), Vector(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = data.x.row(i);
    data.a[i] = rng.bernoulli(propensity(x)) ? 1.0 : 0.0;
    data.y[i] = outcome(x, data.a[i], rng);
  }
  return data;
}

CausalDemoConfig::CausalDemoConfig() {
  cfm.train.hidden = {64, 64};
  cfm.train.epochs = 150;
  cfm.train.step_size = 3e-3;
  cfm.train.batch_size = 128;
  cfm.train.cosine_schedule = true;
  baseline.hidden = {64, 64};
  baseline.epochs = 100;
  baseline.step_size = 3e-3;
  baseline.batch_size = 128;
  baseline.cosine_schedule = true;
}

double top_decile_gap(std::span<const double> truth, std::span<const double> estimate) {
  const auto qq = diag::qq_points(truth, estimate, 100);
  double s = 0.0;
  std::size_t c = 0;
  for (std::size_t i = 0; i < qq.size(); ++i) {
    if ((static_cast<double>(i) + 0.5) / 100.0 < 0.9) continue;
    s += qq[i].first - qq[i].second;
    ++c;
  }
  return s / static_cast<double>(c);
}

namespace {

// Network regression on standardized targets.
struct ScaledNet {
  nn::Mlp net;
  double mean = 0.0, sd = 1.0;

  double operator()(std::span<const double> x) const { return mean + sd * net.forward(x)[0]; }
};

ScaledNet fit_scaled(const Matrix& x, std::span<const double> y, const nn::TrainConfig& cfg, RngStream& rng) {
  ScaledNet out;
  std::tie(out.mean, out.sd) = mean_sd(y);
  if (!(out.sd > 0.0)) out.sd = 1.0;
  Matrix t(y.size(), 1);
  for (std::size_t i = 0; i < y.size(); ++i) t(i, 0) = (y[i] - out.mean) / out.sd;
  out.net = nn::train(x, t, cfg, rng);
  return out;
}

void summarize(InterventionalSummary& s, const CausalDemoConfig& cfg, const InterventionalSummary* truth) {
  s.ate = mean_sd(s.y1).first - mean_sd(s.y0).first;
  s.qte.clear();
  for (double a : cfg.alphas) s.qte.push_back(diag::qte(s.y1, s.y0, a));
  if (truth) {
    s.w1_0 = diag::w1_1d(s.y0, truth->y0);
    s.w1_1 = diag::w1_1d(s.y1, truth->y1);
  }
}

}  // namespace

CausalDemoResult causal_demo(const CausalDemoConfig& cfg, RngStream& rng) {
  const CausalDgp dgp{cfg.kappa, cfg.d};
  RngStream data_rng = rng.child(0);
  const auto data = dgp.draw(cfg.n, data_rng);
  const std::size_t n = data.size();

  CausalDemoResult out;
  out.propensity_min = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = dgp.propensity(data.x.row(i));
    out.propensity_min = std::min(out.propensity_min, e);
    out.propensity_max = std::max(out.propensity_max, e);
  }

  // Evaluation covariates shared by the truth and both samplers.
  RngStream eval_rng = rng.child(1);
  const Matrix xe = dgp.draw_x(cfg.n_eval, eval_rng);
  out.truth.y0.resize(cfg.n_eval);
  out.truth.y1.resize(cfg.n_eval);
  for (std::size_t i = 0; i < cfg.n_eval; ++i) {
    out.truth.y0[i] = dgp.outcome(xe.row(i), 0.0, eval_rng);
    out.truth.y1[i] = dgp.outcome(xe.row(i), 1.0, eval_rng);
  }
  summarize(out.truth, cfg, nullptr);

  // Baseline: per-arm mean and log-scale networks, pooled standardized residuals.
  RngStream base_rng = rng.child(2);
  std::vector<ScaledNet> mu(2), logvar(2);
  Vector pooled;
  for (int a = 0; a < 2; ++a) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (data.a[i] == static_cast<double>(a)) rows.push_back(i);
    require(rows.size() >= 10, ErrorCode::ArmMissing, "causal_demo: arm has too few rows");
    const auto arm = data.subset(rows);
    mu[a] = fit_scaled(arm.x, arm.y, cfg.baseline, base_rng);
    Vector resid(arm.size()), lr(arm.size());
    for (std::size_t i = 0; i < arm.size(); ++i) {
      resid[i] = arm.y[i] - mu[a](arm.x.row(i));
      lr[i] = std::log(std::max(resid[i] * resid[i], 1e-12));
    }
    logvar[a] = fit_scaled(arm.x, lr, cfg.baseline, base_rng);
    for (std::size_t i = 0; i < arm.size(); ++i) pooled.push_back(resid[i] / std::exp(0.5 * logvar[a](arm.x.row(i))));
  }
  for (int a = 0; a < 2; ++a) {
    Vector& ys = a ? out.baseline.y1 : out.baseline.y0;
    ys.resize(cfg.n_eval);
    for (std::size_t i = 0; i < cfg.n_eval; ++i) {
      const auto x = xe.row(i);
      ys[i] = mu[a](x) + std::exp(0.5 * logvar[a](x)) * pooled[base_rng.index(pooled.size())];
    }
  }
  summarize(out.baseline, cfg, &out.truth);

  // Flow sampler for y | (x, a) on a standardized outcome.
  RngStream flow_rng = rng.child(3);
  const auto [ym, ysd] = mean_sd(data.y);
  Matrix cond(n, cfg.d + 1), y(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(data.x.row(i).begin(), cfg.d, cond.row(i).begin());
    cond(i, cfg.d) = data.a[i];
    y(i, 0) = (data.y[i] - ym) / ysd;
  }
  const auto model = flow::conditional_cfm_train(cond, y, cfg.cfm, flow_rng).model;
  for (int a = 0; a < 2; ++a) {
    Matrix ce(cfg.n_eval, cfg.d + 1);
    for (std::size_t i = 0; i < cfg.n_eval; ++i) {
      std::copy_n(xe.row(i).begin(), cfg.d, ce.row(i).begin());
      ce(i, cfg.d) = a;
    }
    const Matrix g = flow::flow_generate(model, cfg.n_eval, ce, cfg.ode, flow_rng);
    Vector& ys = a ? out.flow.y1 : out.flow.y0;
    ys.resize(cfg.n_eval);
    for (std::size_t i = 0; i < cfg.n_eval; ++i) ys[i] = ym + ysd * g(i, 0);
  }
  summarize(out.flow, cfg, &out.truth);

  out.baseline_top_gap = top_decile_gap(out.truth.y1, out.baseline.y1);
  out.flow_top_gap = top_decile_gap(out.truth.y1, out.flow.y1);

  RngStream aipw_rng = rng.child(4);
  out.aipw = inference::ate_crossfit(data, cfg.folds, inference::linear_learner(), 0.01, aipw_rng);
  return out;
}

}  // namespace fmstat::experiments
