#include <algorithm>
#include <cmath>
#include <map>

#include "fmstat/diagnostics.hpp"
#include "fmstat/error.hpp"
#include "fmstat/experiments.hpp"

namespace fmstat::experiments {

// ---- 1-D flow matching ----

CfmGaussianConfig::CfmGaussianConfig() {
  cfm.train.hidden = {32, 32};
  cfm.train.epochs = 40;
  cfm.train.batch_size = 128;
  cfm.train.step_size = 3e-3;
  cfm.train.cosine_schedule = true;
}

CfmGaussianResult cfm_gaussian_benchmark(const CfmGaussianConfig& cfg, RngStream& rng) {
  require(cfg.sd > 0.0, ErrorCode::InvalidArgument, "cfm benchmark: sd must be positive");
  Matrix data(cfg.n_train, 1);
  for (std::size_t i = 0; i < cfg.n_train; ++i) data(i, 0) = cfg.mean + cfg.sd * rng.normal();
  CfmGaussianResult out;
  out.fit = flow::cfm_train(data, cfg.cfm, rng);
  out.generated = flow::flow_generate(out.fit.model, cfg.n_sample, Matrix(), cfg.ode, rng).values();
  out.reference.resize(cfg.n_sample);
  for (auto& v : out.reference) v = cfg.mean + cfg.sd * rng.normal();
  out.w1 = diag::w1_1d(out.generated, out.reference);
  return out;
}

// ---- Coupling comparison ----

double CouplingCompareResult::fraction_lower() const {
  return bins.empty() ? 0.0 : static_cast<double>(lower) / static_cast<double>(bins.size());
}

CouplingCompareResult coupling_compare(const CouplingCompareConfig& cfg, RngStream& rng) {
  require(cfg.m >= 2 && cfg.batches >= 1 && cfg.t_bins >= 1 && cfg.x_bin_width > 0.0, ErrorCode::InvalidArgument,
          "coupling_compare: bad sizes");
  struct Acc {
    std::size_t n = 0;
    double s = 0.0, ss = 0.0;
    double var() const {
      const double m = s / static_cast<double>(n);
      return ss / static_cast<double>(n) - m * m;
    }
  };
  std::map<std::pair<int, int>, Acc> ind, ot;
  double cost_ind = 0.0, cost_ot = 0.0;
  const double tb = static_cast<double>(cfg.t_bins);
  for (std::size_t b = 0; b < cfg.batches; ++b) {
    Matrix x1(cfg.m, 1), x0(cfg.m, 1);
    for (std::size_t i = 0; i < cfg.m; ++i) {
      x1(i, 0) = (rng.bernoulli(0.5) ? -cfg.cluster : cfg.cluster) + cfg.cluster_sd * rng.normal();
      x0(i, 0) = rng.normal();
    }
    for (auto kind : {flow::CouplingKind::Independent, flow::CouplingKind::Assignment}) {
      const bool is_ot = kind == flow::CouplingKind::Assignment;
      auto& acc = is_ot ? ot : ind;
      const Matrix paired = flow::pair_minibatch(x1, x0, kind, rng);
      for (std::size_t i = 0; i < cfg.m; ++i) {
        const double t = rng.uniform();
        const auto s = flow::linear_path(paired.row(i), x1.row(i), t);
        (is_ot ? cost_ot : cost_ind) += s.u[0] * s.u[0];
        const std::pair key{std::min(static_cast<int>(t * tb), static_cast<int>(cfg.t_bins) - 1),
                            static_cast<int>(std::floor(s.xt[0] / cfg.x_bin_width))};
        auto& a = acc[key];
        ++a.n;
        a.s += s.u[0];
        a.ss += s.u[0] * s.u[0];
      }
    }
  }
  CouplingCompareResult out;
  const double pairs = static_cast<double>(cfg.batches * cfg.m);
  out.cost_ind = cost_ind / pairs;
  out.cost_ot = cost_ot / pairs;
  for (const auto& [key, a] : ind) {
    const auto it = ot.find(key);
    if (a.n < cfg.min_count || it == ot.end() || it->second.n < cfg.min_count) continue;
    CouplingBin bin{key.first, key.second, a.n, it->second.n, a.var(), it->second.var()};
    if (bin.var_ot < bin.var_ind) ++out.lower;
    out.bins.push_back(bin);
  }
  return out;
}

// ---- Lipschitz map ----

LipschitzMapConfig::LipschitzMapConfig() {
  cfm.train.hidden = {32, 32};
  cfm.train.epochs = 60;
  cfm.train.step_size = 3e-3;
  cfm.train.batch_size = 128;
  cfm.train.cosine_schedule = true;
}

LipschitzMapResult lipschitz_map(const LipschitzMapConfig& cfg, RngStream& rng) {
  require(cfg.lipschitz_cap > 0.0, ErrorCode::InvalidArgument, "lipschitz_map: cap must be positive");
  require(cfg.grid >= 2 && cfg.extent > 0.0, ErrorCode::InvalidArgument, "lipschitz_map: bad grid");
  Matrix data(cfg.n, 2);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const double scale = rng.bernoulli(cfg.outlier_frac) ? cfg.outlier_scale : 1.0;
    data(i, 0) = scale * rng.normal();
    data(i, 1) = scale * rng.normal();
  }
  RngStream free_rng = rng.child(1), clamp_rng = rng.child(2);
  flow::CfmConfig free_cfg = cfg.cfm;
  free_cfg.train.spectral_cap.reset();
  flow::CfmConfig clamp_cfg = cfg.cfm;
  const double layers = static_cast<double>(cfg.cfm.train.hidden.size() + 1);
  clamp_cfg.train.spectral_cap = std::pow(cfg.lipschitz_cap, 1.0 / layers);
  const flow::FlowModel free_model = flow::cfm_train(data, free_cfg, free_rng).model;
  const flow::FlowModel clamp_model = flow::cfm_train(data, clamp_cfg, clamp_rng).model;

  LipschitzMapResult out;
  out.bound_free = nn::lipschitz_upper_bound(free_model.net());
  out.bound_clamped = nn::lipschitz_upper_bound(clamp_model.net());
  const auto vf = free_model.field(), vc = clamp_model.field();
  RngStream probe_rng = rng.child(3);
  for (std::size_t i = 0; i < cfg.grid; ++i)
    for (std::size_t j = 0; j < cfg.grid; ++j) {
      LipschitzCell c;
      const double step = 2.0 * cfg.extent / static_cast<double>(cfg.grid - 1);
      c.x = -cfg.extent + step * static_cast<double>(i);
      c.y = -cfg.extent + step * static_cast<double>(j);
      const Vector x0{c.x, c.y};
      c.ratio_free = flow::sensitivity_ratio(vf, x0, cfg.delta, cfg.ode, cfg.probes, probe_rng);
      c.ratio_clamped = flow::sensitivity_ratio(vc, x0, cfg.delta, cfg.ode, cfg.probes, probe_rng);
      out.max_free = std::max(out.max_free, c.ratio_free);
      out.max_clamped = std::max(out.max_clamped, c.ratio_clamped);
      out.cells.push_back(c);
    }
  return out;
}

}  // namespace fmstat::experiments
