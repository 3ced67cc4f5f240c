#include "runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "fmstat/copula.hpp"
#include "fmstat/diagnostics.hpp"
#include "fmstat/experiments.hpp"
#include "fmstat/kernels.hpp"
#include "report.hpp"

namespace fmstat::cli {

using nlohmann::json;
namespace fs = std::filesystem;
namespace ex = fmstat::experiments;

namespace {

[[noreturn]] void config_error(const std::string& msg) { fail(ErrorCode::ConfigInvalid, msg); }

// Typed access to the flat parameter object. Every read is echoed into
// `effective`; keys never read are reported by finish().
class Params {
 public:
  Params(const json& j, std::string sub) : j_(j), sub_(std::move(sub)) {}

  bool has(const std::string& key) const { return j_.contains(key); }

  std::size_t count(const std::string& key, std::size_t def) {
    std::size_t v = def;
    if (const json* x = take(key)) {
      if (!x->is_number_integer() && !x->is_number_unsigned()) bad(key, "a positive integer");
      const auto i = x->get<std::int64_t>();
      if (i <= 0) bad(key, "a positive integer");
      v = static_cast<std::size_t>(i);
    }
    effective_[key] = v;
    return v;
  }

  double real(const std::string& key, double def) {
    double v = def;
    if (const json* x = take(key)) {
      if (!x->is_number()) bad(key, "a number");
      v = x->get<double>();
      if (!std::isfinite(v)) bad(key, "a finite number");
    }
    effective_[key] = v;
    return v;
  }

  double positive(const std::string& key, double def) {
    const double v = real(key, def);
    if (!(v > 0.0)) bad(key, "a positive number");
    return v;
  }

  double unit(const std::string& key, double def) {
    const double v = real(key, def);
    if (!(v > 0.0 && v < 1.0)) bad(key, "a number in (0, 1)");
    return v;
  }

  bool flag(const std::string& key, bool def) {
    bool v = def;
    if (const json* x = take(key)) {
      if (!x->is_boolean()) bad(key, "a boolean");
      v = x->get<bool>();
    }
    effective_[key] = v;
    return v;
  }

  std::string text(const std::string& key, std::string def, const std::vector<std::string>& allowed = {}) {
    std::string v = std::move(def);
    if (const json* x = take(key)) {
      if (!x->is_string()) bad(key, "a string");
      v = x->get<std::string>();
    }
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      bad(key, "one of " + list);
    }
    effective_[key] = v;
    return v;
  }

  std::optional<std::string> maybe_text(const std::string& key) {
    const json* x = take(key);
    if (!x) return std::nullopt;
    if (!x->is_string()) bad(key, "a string");
    effective_[key] = *x;
    return x->get<std::string>();
  }

  std::optional<double> maybe_real(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return real(key, 0.0);
  }

  std::vector<double> reals(const std::string& key, std::vector<double> def) {
    std::vector<double> v = std::move(def);
    if (const json* x = take(key)) {
      if (!x->is_array() || x->empty()) bad(key, "a non-empty array of numbers");
      v.clear();
      for (const auto& e : *x) {
        if (!e.is_number()) bad(key, "a non-empty array of numbers");
        v.push_back(e.get<double>());
      }
    }
    effective_[key] = v;
    return v;
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> def) {
    std::vector<std::size_t> v = std::move(def);
    if (const json* x = take(key)) {
      if (!x->is_array() || x->empty()) bad(key, "a non-empty array of positive integers");
      v.clear();
      for (const auto& e : *x) {
        if (!e.is_number_integer() || e.get<std::int64_t>() <= 0) bad(key, "a non-empty array of positive integers");
        v.push_back(e.get<std::size_t>());
      }
    }
    effective_[key] = v;
    return v;
  }

  // Throws ConfigInvalid listing every key nobody asked for.
  void finish() const {
    std::string unknown;
    for (const auto& [k, _] : j_.items())
      if (!used_.count(k)) unknown += (unknown.empty() ? "'" : ", '") + k + "'";
    if (!unknown.empty()) config_error(sub_ + ": unknown config key(s) " + unknown);
  }

  const json& effective() const { return effective_; }

 private:
  const json* take(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void bad(const std::string& key, const std::string& want) const {
    config_error(sub_ + ": config key '" + key + "' must be " + want);
  }

  const json& j_;
  std::string sub_;
  std::set<std::string> used_;
  json effective_ = json::object();
};

void read_train(Params& p, const std::string& prefix, nn::TrainConfig& t) {
  t.hidden = p.counts(prefix + "hidden", t.hidden);
  t.epochs = p.count(prefix + "epochs", t.epochs);
  t.step_size = p.positive(prefix + "step_size", t.step_size);
  t.batch_size = p.count(prefix + "batch_size", t.batch_size);
  t.weight_decay = p.real(prefix + "weight_decay", t.weight_decay);
  if (t.weight_decay < 0.0) config_error("config key '" + prefix + "weight_decay' must be non-negative");
}

void read_cfm(Params& p, flow::CfmConfig& c, bool coupling) {
  read_train(p, "", c.train);
  if (coupling)
    c.coupling = flow::coupling_from_string(
        p.text("coupling", flow::to_string(c.coupling), {"independent", "assignment", "entropic"}));
}

void read_ode(Params& p, flow::OdeConfig& o) {
  o.steps = p.count("ode_steps", o.steps);
  o.scheme = flow::scheme_from_string(p.text("scheme", flow::to_string(o.scheme), {"euler", "rk4"}));
}

Vector column(const Matrix& m, std::size_t j) { return m.col(j); }

// Outputs, timings and summary values of one run.
class Context {
 public:
  Context(fs::path out, RunManifest& manifest) : out_(std::move(out)), m_(manifest) {}

  const fs::path& out() const { return out_; }

  void csv(const std::string& name, const CsvTable& t) {
    t.write(out_ / name);
    m_.files.push_back(name);
    m_.columns[name] = t.header();
  }
  void svg(const std::string& name, const SvgFigure& f) {
    f.write(out_ / name);
    m_.files.push_back(name);
  }
  void text(const std::string& name, const std::string& body) {
    std::ofstream f(out_ / name, std::ios::binary);
    f << body;
    require(f.good(), ErrorCode::Io, "write failed for " + name);
    m_.files.push_back(name);
  }

  template <class F>
  auto stage(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto result = f();
    record(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return result;
  }
  void record(const std::string& name, double seconds) { m_.timings.push_back({name, seconds}); }

  json& summary() { return m_.summary; }

 private:
  fs::path out_;
  RunManifest& m_;
};

// Scalar (metric, value) table.
CsvTable metric_table(const std::vector<std::pair<std::string, double>>& rows) {
  CsvTable t({"metric", "value"});
  for (const auto& [k, v] : rows) t.row({k, cell(v)});
  return t;
}

void add_metrics(Context& ctx, const std::vector<std::pair<std::string, double>>& rows) {
  for (const auto& [k, v] : rows) ctx.summary()[k] = std::isfinite(v) ? json(v) : json(nullptr);
}

std::pair<double, double> finite_range(std::initializer_list<const std::vector<double>*> vs) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : vs)
    for (double x : *v)
      if (std::isfinite(x)) lo = std::min(lo, x), hi = std::max(hi, x);
  if (!(hi > lo)) return {lo - 0.5, lo + 0.5};
  return {lo, hi};
}

// ---- Subcommands ----

void run_ggm(Params& p, std::optional<std::size_t> reps, RngStream& rng, Context& ctx) {
  ex::GgmBenchConfig c;
  c.d = p.count("d", c.d);
  c.n = p.count("n", c.n);
  c.reps = reps ? *reps : p.count("reps", c.reps);
  c.edge_prob = p.unit("edge_prob", c.edge_prob);
  c.edge_lo = p.positive("edge_lo", c.edge_lo);
  c.edge_hi = p.positive("edge_hi", c.edge_hi);
  c.diag_margin = p.positive("diag_margin", c.diag_margin);
  c.max_iter = p.count("max_iter", c.max_iter);
  c.tol = p.positive("tol", c.tol);
  c.lambda_grid = p.reals("lambda_grid", c.lambda_grid);
  c.rho_grid = p.reals("rho_grid", c.rho_grid);
  c.alpha_grid = p.reals("alpha_grid", c.alpha_grid);
  c.lambda = p.maybe_real("lambda");
  c.rho = p.maybe_real("rho");
  c.alpha = p.maybe_real("alpha");
  if (c.edge_hi < c.edge_lo) config_error("ggm-bench: edge_hi must not be below edge_lo");
  p.finish();

  const auto res = ex::ggm_bench(c, rng);
  ctx.record("tune", res.tune_seconds);
  ctx.record("replicates", res.total_seconds - res.tune_seconds);

  CsvTable reps_t({"rep", "rmse_sm", "iter_sm", "rmse_mle", "iter_mle", "ct_sm_seconds", "ct_mle_seconds"});
  std::vector<double> rs, rm, ts, tm;
  for (const auto& r : res.reps) {
    reps_t.row({cell(r.rep), cell(r.rmse_sm), cell(r.iter_sm), cell(r.rmse_mle), cell(r.iter_mle), cell(r.ct_sm),
                cell(r.ct_mle)});
    rs.push_back(r.rmse_sm), rm.push_back(r.rmse_mle), ts.push_back(r.ct_sm), tm.push_back(r.ct_mle);
  }
  ctx.csv("ggm_replicates.csv", reps_t);

  const auto ms = [](const std::vector<double>& v) {
    return v.size() >= 2 ? ex::mean_sd(v) : std::pair{v.empty() ? 0.0 : v[0], 0.0};
  };
  CsvTable table({"method", "rmse_mean", "rmse_sd", "ct_mean_seconds", "ct_sd_seconds"});
  table.row({"mle", cell(ms(rm).first), cell(ms(rm).second), cell(ms(tm).first), cell(ms(tm).second)});
  table.row({"sm", cell(ms(rs).first), cell(ms(rs).second), cell(ms(ts).first), cell(ms(ts).second)});
  ctx.csv("ggm_table.csv", table);

  CsvTable tuned({"lambda", "rho", "alpha", "reps", "sm_rmse_wins"});
  tuned.row({cell(res.lambda), cell(res.rho), cell(res.alpha), cell(res.reps.size()), cell(res.sm_rmse_wins())});
  ctx.csv("ggm_tuning.csv", tuned);

  SvgFigure fig;
  auto& panel = fig.add_panel("RMSE per replicate");
  panel.xlabel = "RMSE (graphical lasso)";
  panel.ylabel = "RMSE (score matching)";
  panel.diagonal = true;
  panel.points(rm, rs, "#d62728");
  ctx.svg("ggm_rmse.svg", fig);

  add_metrics(ctx, {{"lambda", res.lambda},
                    {"rho", res.rho},
                    {"alpha", res.alpha},
                    {"sm_rmse_wins", static_cast<double>(res.sm_rmse_wins())},
                    {"sm_time_wins", static_cast<double>(res.sm_time_wins())},
                    {"reps", static_cast<double>(res.reps.size())},
                    {"total_seconds", res.total_seconds}});
}

void run_quartic(Params& p, RngStream& rng, Context& ctx) {
  const std::size_t n = p.count("n", 50000);
  p.finish();
  const auto res = ctx.stage("fit", [&] { return ex::quartic_demo(n, rng); });
  CsvTable t({"param", "value"});
  t.row({"theta1", cell(res.theta.t1)}).row({"theta2", cell(res.theta.t2)}).row({"theta3", cell(res.theta.t3)});
  ctx.csv("theta_hat.csv", t);

  CsvTable curve({"x", "score_fitted", "score_standard_normal"});
  std::vector<double> xs, fitted, truth;
  for (int k = 0; k <= 60; ++k) {
    const double x = -3.0 + 0.1 * k;
    xs.push_back(x);
    fitted.push_back(score::quartic_score(res.theta, x));
    truth.push_back(-x);
    curve.row({cell(x), cell(fitted.back()), cell(truth.back())});
  }
  ctx.csv("quartic_score.csv", curve);
  SvgFigure fig;
  auto& panel = fig.add_panel("Fitted score");
  panel.xlabel = "x";
  panel.line(xs, truth, "#888888", "-x").line(xs, fitted, "#1f77b4", "fitted");
  ctx.svg("quartic_score.svg", fig);
  add_metrics(ctx, {{"theta1", res.theta.t1}, {"theta2", res.theta.t2}, {"theta3", res.theta.t3},
                    {"objective", res.objective}});
}

json flow_model_json(const flow::FlowModel& m) {
  return json{{"format", "fmstat-flow"},
              {"state_dim", m.state_dim()},
              {"cond_dim", m.cond_dim()},
              {"net", json::parse(nn::to_json(m.net()))}};
}

flow::FlowModel flow_model_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != "fmstat-flow" || !j.contains("net"))
    config_error("cfm-sample: model file is not an fmstat flow model");
  return flow::FlowModel(nn::from_json(j.at("net").dump()), j.at("state_dim").get<std::size_t>(),
                         j.at("cond_dim").get<std::size_t>());
}

void sample_plot(Context& ctx, const std::string& name, const std::string& title, const std::vector<double>& a,
                 const std::string& la, const std::vector<double>* b, const std::string& lb) {
  const auto [lo, hi] = b ? finite_range({&a, b}) : finite_range({&a});
  SvgFigure fig;
  auto& panel = fig.add_panel(title);
  panel.ylabel = "density";
  const auto ha = histogram(a, lo, hi, 50);
  panel.bars(ha.first, ha.second, "#1f77b4", la);
  if (b) {
    const auto hb = histogram(*b, lo, hi, 50);
    panel.bars(hb.first, hb.second, "#ff7f0e", lb);
  }
  ctx.svg(name, fig);
}

void run_cfm_train(Params& p, RngStream& rng, Context& ctx) {
  ex::CfmGaussianConfig c;
  c.mean = p.real("mean", c.mean);
  c.sd = p.positive("sd", c.sd);
  c.n_train = p.count("n_train", c.n_train);
  c.n_sample = p.count("n_sample", c.n_sample);
  read_cfm(p, c.cfm, true);
  read_ode(p, c.ode);
  p.finish();

  const auto res = ctx.stage("train_and_sample", [&] { return ex::cfm_gaussian_benchmark(c, rng); });
  ctx.text("model.json", flow_model_json(res.fit.model).dump(1) + "\n");

  CsvTable loss({"epoch", "loss"});
  std::vector<double> ep;
  for (std::size_t e = 0; e < res.fit.epoch_loss.size(); ++e) {
    loss.row({cell(e + 1), cell(res.fit.epoch_loss[e])});
    ep.push_back(static_cast<double>(e + 1));
  }
  ctx.csv("cfm_loss.csv", loss);
  CsvTable samples({"generated", "reference"});
  for (std::size_t i = 0; i < res.generated.size(); ++i)
    samples.row({cell(res.generated[i]), cell(res.reference[i])});
  ctx.csv("cfm_samples.csv", samples);
  const double final_loss = res.fit.epoch_loss.empty() ? res.fit.initial_loss : res.fit.epoch_loss.back();
  ctx.csv("cfm_summary.csv",
          metric_table({{"w1", res.w1}, {"initial_loss", res.fit.initial_loss}, {"final_loss", final_loss}}));

  SvgFigure lf;
  auto& lp = lf.add_panel("Training loss");
  lp.xlabel = "epoch";
  lp.line(ep, res.fit.epoch_loss, "#1f77b4");
  ctx.svg("cfm_loss.svg", lf);
  sample_plot(ctx, "cfm_samples.svg", "Generated vs target", res.generated, "generated", &res.reference, "target");
  add_metrics(ctx, {{"w1", res.w1}, {"final_loss", final_loss}});
}

void run_cfm_sample(Params& p, RngStream& rng, Context& ctx) {
  const auto model_path = p.maybe_text("model");
  if (!model_path) config_error("cfm-sample: config key 'model' (path to a model.json from cfm-train) is required");
  const std::size_t n = p.count("n", 5000);
  flow::OdeConfig ode{100, flow::Scheme::Rk4, flow::Direction::Forward};
  read_ode(p, ode);
  p.finish();

  std::ifstream f(*model_path);
  if (!f) config_error("cfm-sample: cannot open model file '" + *model_path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    config_error("cfm-sample: model file is not valid JSON: " + std::string(e.what()));
  }
  const flow::FlowModel model = flow_model_from_json(j);
  if (model.cond_dim() != 0) config_error("cfm-sample: conditional models are not supported here");

  const Matrix x = ctx.stage("sample", [&] { return flow::flow_generate(model, n, Matrix(), ode, rng); });
  std::vector<std::string> header;
  for (std::size_t k = 0; k < x.cols(); ++k) header.push_back("x" + std::to_string(k + 1));
  CsvTable t(header);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::vector<std::string> r;
    for (double v : x.row(i)) r.push_back(cell(v));
    t.row(std::move(r));
  }
  ctx.csv("samples.csv", t);
  if (x.cols() == 1) {
    sample_plot(ctx, "samples.svg", "Generated sample", column(x, 0), "generated", nullptr, "");
  } else {
    SvgFigure fig;
    auto& panel = fig.add_panel("Generated sample (first two coordinates)");
    panel.points(column(x, 0), column(x, 1), "#1f77b4");
    ctx.svg("samples.svg", fig);
  }
  const auto [mean, sd] = x.rows() >= 2 ? ex::mean_sd(column(x, 0)) : std::pair{0.0, 0.0};
  add_metrics(ctx, {{"n", static_cast<double>(n)}, {"mean_x1", mean}, {"sd_x1", sd}});
}

void run_coupling(Params& p, RngStream& rng, Context& ctx) {
  ex::CouplingCompareConfig c;
  c.batches = p.count("batches", c.batches);
  c.m = p.count("m", c.m);
  c.cluster = p.positive("cluster", c.cluster);
  c.cluster_sd = p.positive("cluster_sd", c.cluster_sd);
  c.t_bins = p.count("t_bins", c.t_bins);
  c.x_bin_width = p.positive("x_bin_width", c.x_bin_width);
  c.min_count = p.count("min_count", c.min_count);
  p.finish();
  if (c.m > 256) config_error("coupling-compare: m must be at most 256");

  const auto res = ctx.stage("pairing", [&] { return ex::coupling_compare(c, rng); });
  CsvTable bins({"t_bin", "x_bin", "n_independent", "n_assignment", "var_independent", "var_assignment"});
  std::vector<double> vi, vo;
  for (const auto& b : res.bins) {
    bins.row({std::to_string(b.t_bin), std::to_string(b.x_bin), cell(b.n_ind), cell(b.n_ot), cell(b.var_ind),
              cell(b.var_ot)});
    vi.push_back(b.var_ind), vo.push_back(b.var_ot);
  }
  ctx.csv("coupling_bins.csv", bins);
  const std::vector<std::pair<std::string, double>> m{{"bins", static_cast<double>(res.bins.size())},
                                                      {"bins_lower", static_cast<double>(res.lower)},
                                                      {"fraction_lower", res.fraction_lower()},
                                                      {"cost_independent", res.cost_ind},
                                                      {"cost_assignment", res.cost_ot}};
  ctx.csv("coupling_summary.csv", metric_table(m));
  SvgFigure fig;
  auto& panel = fig.add_panel("Teacher-signal variance per (t, x_t) bin");
  panel.xlabel = "independent";
  panel.ylabel = "exact assignment";
  panel.diagonal = true;
  panel.points(vi, vo, "#2ca02c");
  ctx.svg("coupling_bins.svg", fig);
  add_metrics(ctx, m);
}

void run_lipschitz(Params& p, RngStream& rng, Context& ctx) {
  ex::LipschitzMapConfig c;
  c.n = p.count("n", c.n);
  c.outlier_frac = p.real("outlier_frac", c.outlier_frac);
  if (c.outlier_frac < 0.0 || c.outlier_frac >= 1.0) config_error("lipschitz-map: outlier_frac must lie in [0, 1)");
  c.outlier_scale = p.positive("outlier_scale", c.outlier_scale);
  c.lipschitz_cap = p.positive("lipschitz_cap", c.lipschitz_cap);
  c.grid = p.count("grid", c.grid);
  if (c.grid < 2) config_error("lipschitz-map: grid must be at least 2");
  c.extent = p.positive("extent", c.extent);
  c.delta = p.positive("delta", c.delta);
  c.probes = p.count("probes", c.probes);
  read_cfm(p, c.cfm, false);
  read_ode(p, c.ode);
  p.finish();

  const auto res = ctx.stage("train_and_probe", [&] { return ex::lipschitz_map(c, rng); });
  CsvTable grid({"x", "y", "ratio_unclamped", "ratio_clamped"});
  std::vector<double> xs, ys, rf, rc;
  for (const auto& cl : res.cells) {
    grid.row({cell(cl.x), cell(cl.y), cell(cl.ratio_free), cell(cl.ratio_clamped)});
    xs.push_back(cl.x), ys.push_back(cl.y), rf.push_back(cl.ratio_free), rc.push_back(cl.ratio_clamped);
  }
  ctx.csv("sensitivity_grid.csv", grid);
  const std::vector<std::pair<std::string, double>> m{{"bound_unclamped", res.bound_free},
                                                      {"bound_clamped", res.bound_clamped},
                                                      {"max_ratio_unclamped", res.max_free},
                                                      {"max_ratio_clamped", res.max_clamped},
                                                      {"exp_cap", std::exp(c.lipschitz_cap)}};
  ctx.csv("lipschitz_summary.csv", metric_table(m));
  const auto [lo, hi] = finite_range({&rf, &rc});
  ctx.text("sensitivity_unclamped.svg", svg_heatmap(xs, ys, rf, lo, hi, "Sensitivity ratio, unclamped"));
  ctx.text("sensitivity_clamped.svg", svg_heatmap(xs, ys, rc, lo, hi, "Sensitivity ratio, clamped"));
  add_metrics(ctx, m);
}

Matrix read_numeric_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) config_error("cannot open data file '" + path + "'");
  std::string line;
  std::getline(f, line);  // header
  std::vector<double> vals;
  std::size_t cols = 0, rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::size_t c = 0;
    while (std::getline(ss, tok, ',')) {
      try {
        vals.push_back(std::stod(tok));
      } catch (const std::exception&) {
        config_error("data file '" + path + "': non-numeric cell '" + tok + "'");
      }
      ++c;
    }
    if (rows == 0) cols = c;
    if (c != cols || c == 0) config_error("data file '" + path + "': ragged row " + std::to_string(rows + 2));
    ++rows;
  }
  if (rows == 0) config_error("data file '" + path + "' has no rows");
  return Matrix(rows, cols, std::move(vals));
}

void run_ksd(Params& p, std::optional<std::size_t> reps, RngStream& rng, Context& ctx) {
  if (p.has("data")) {
    // Single test of a data file against N(0, I).
    const std::string path = *p.maybe_text("data");
    const std::size_t b = p.count("b", 300);
    const auto bw = p.maybe_real("bandwidth");
    p.finish();
    if (reps) config_error("ksd-test: --reps does not apply to a data-file test");
    const Matrix x = read_numeric_csv(path);
    const diag::ScoreFn score = [](std::span<const double> v) {
      Vector s(v.begin(), v.end());
      for (auto& e : s) e = -e;
      return s;
    };
    const double h = bw ? *bw : diag::median_heuristic(x);
    if (!(h > 0.0)) config_error("ksd-test: bandwidth must be positive");
    const auto res = ctx.stage("test", [&] { return diag::ksd_wild_bootstrap(x, score, diag::RbfKernel{h}, b, rng); });
    ctx.text("ksd.json", res.to_json() + "\n");
    add_metrics(ctx, {{"statistic", res.statistic}, {"p_value", res.p_value}, {"bandwidth", res.bandwidth}});
    return;
  }
  ex::KsdStudyConfig c;
  c.n = p.count("n", c.n);
  c.d = p.count("d", c.d);
  c.b = p.count("b", c.b);
  c.reps = reps ? *reps : p.count("reps", c.reps);
  c.shift = p.real("shift", c.shift);
  c.alpha = p.unit("alpha", c.alpha);
  p.finish();
  if (c.b < 100) config_error("ksd-test: b must be at least 100");
  if (c.n < 2) config_error("ksd-test: n must be at least 2");

  const auto res = ctx.stage("replicates", [&] { return ex::ksd_study(c, rng); });
  CsvTable t({"rep", "stat_null", "p_null", "stat_alt", "p_alt"});
  std::vector<double> pn, pa;
  for (const auto& r : res.rows) {
    t.row({cell(r.rep), cell(r.stat_null), cell(r.p_null), cell(r.stat_alt), cell(r.p_alt)});
    pn.push_back(r.p_null), pa.push_back(r.p_alt);
  }
  ctx.csv("ksd_replicates.csv", t);
  const std::vector<std::pair<std::string, double>> m{{"null_rejection_rate", res.null_rate}, {"power", res.power}};
  ctx.csv("ksd_summary.csv", metric_table(m));
  SvgFigure fig;
  auto& panel = fig.add_panel("Bootstrap p-values");
  panel.xlabel = "p-value";
  const auto hn = histogram(pn, 0.0, 1.0, 20), ha = histogram(pa, 0.0, 1.0, 20);
  panel.bars(hn.first, hn.second, "#1f77b4", "null").bars(ha.first, ha.second, "#d62728", "shifted");
  ctx.svg("ksd_pvalues.svg", fig);
  add_metrics(ctx, m);
}

void run_linreg(Params& p, std::optional<std::size_t> reps, RngStream& rng, Context& ctx) {
  ex::LinregStudyConfig c;
  c.n = p.count("n", c.n);
  c.reps = reps ? *reps : p.count("reps", c.reps);
  c.folds = p.count("folds", c.folds);
  c.noise = p.positive("noise", c.noise);
  c.skewed = p.flag("skewed", c.skewed);
  p.finish();
  if (c.folds < 2) config_error("linreg-semipar: folds must be at least 2");

  const auto res = ctx.stage("replicates", [&] { return ex::linreg_study(c, rng); });
  CsvTable t({"rep", "ols_b0", "ols_b1", "ols_b2", "semi_b0", "semi_b1", "semi_b2", "scale_fallback", "fixed_gap"});
  std::vector<double> e_ols, e_semi;
  for (const auto& r : res.rows) {
    t.row({cell(r.rep), cell(r.ols[0]), cell(r.ols[1]), cell(r.ols[2]), cell(r.semi[0]), cell(r.semi[1]),
           cell(r.semi[2]), cell(r.scale_fallback), cell(r.fixed_gap)});
    e_ols.push_back(r.ols[1] - res.beta_true[1]);
    e_semi.push_back(r.semi[1] - res.beta_true[1]);
  }
  ctx.csv("linreg_replicates.csv", t);
  const std::vector<std::pair<std::string, double>> m{
      {"mse_ols", res.mse_ols}, {"mse_semiparametric", res.mse_semi}, {"max_fixed_moment_gap", res.max_fixed_gap}};
  ctx.csv("linreg_summary.csv", metric_table(m));
  SvgFigure fig;
  auto& panel = fig.add_panel("Slope error, coefficient 1");
  panel.xlabel = "OLS";
  panel.ylabel = "semiparametric";
  panel.diagonal = true;
  panel.points(e_ols, e_semi, "#9467bd");
  ctx.svg("linreg_errors.svg", fig);
  add_metrics(ctx, m);
}

CsvTable uv_table(const Matrix& u) {
  CsvTable t({"u1", "u2"});
  for (std::size_t i = 0; i < u.rows(); ++i) t.row({cell(u(i, 0)), cell(u(i, 1))});
  return t;
}

void run_copula(Params& p, RngStream& rng, Context& ctx) {
  ex::CopulaDemoConfig c;
  c.dgp = ex::copula_dgp_from_string(p.text("dgp", ex::to_string(c.dgp), {"gaussian", "s-shape"}));
  c.rho = p.real("rho", c.rho);
  if (std::abs(c.rho) >= 1.0) config_error("copula-demo: |rho| must be below 1");
  c.n = p.count("n", c.n);
  if (c.n < 100) config_error("copula-demo: n must be at least 100");
  c.n_sample = p.count("n_sample", c.n_sample);
  c.transform = copula::transform_from_string(p.text("transform", copula::to_string(c.transform), {"logit", "probit"}));
  if (const auto eps = p.maybe_real("eps")) {
    if (!(*eps > 0.0 && *eps < 0.5)) config_error("copula-demo: eps must lie in (0, 0.5)");
    c.copula.eps = eps;
  }
  read_cfm(p, c.copula.cfm, true);
  read_ode(p, c.copula.ode);
  p.finish();

  const auto res = ctx.stage("train_and_sample", [&] { return ex::copula_demo(c, rng); });
  ctx.csv("copula_pseudo.csv", uv_table(res.pseudo));
  ctx.csv("copula_sample.csv", uv_table(res.sample));
  const std::vector<std::pair<std::string, double>> m{{"tau_data", res.tau_data},
                                                      {"tau_sample", res.tau_sample},
                                                      {"tau_theory", res.tau_theory},
                                                      {"ks_u1", res.ks_u1},
                                                      {"ks_u2", res.ks_u2},
                                                      {"invariance_exact", res.invariance_exact ? 1.0 : 0.0}};
  ctx.csv("copula_summary.csv", metric_table(m));
  SvgFigure fig;
  fig.add_panel("Pseudo-observations").points(column(res.pseudo, 0), column(res.pseudo, 1), "#1f77b4");
  fig.add_panel("Flow copula sample").points(column(res.sample, 0), column(res.sample, 1), "#ff7f0e");
  ctx.svg("copula_scatter.svg", fig);
  add_metrics(ctx, m);
}

void run_mi(Params& p, RngStream& rng, Context& ctx) {
  ex::MiDemoConfig c;
  c.n = p.count("n", c.n);
  c.rate = p.unit("rate", c.rate);
  c.imputations = p.count("imputations", c.imputations);
  if (c.imputations < 2) config_error("mi-demo: imputations must be at least 2");
  c.sweeps = p.count("sweeps", c.sweeps);
  read_cfm(p, c.flow.cfm, false);
  read_ode(p, c.flow.ode);
  p.finish();

  const auto res = ctx.stage("impute_and_analyse", [&] { return ex::mi_demo(c, rng); });
  CsvTable recon({"metric", "chained", "flow"});
  const auto row = [&](const char* name, double a, double b) { recon.row({name, cell(a), cell(b)}); };
  row("rmse", res.chained.rmse, res.flow.rmse);
  row("w1", res.chained.w1, res.flow.w1);
  row("brier", res.chained.brier, res.flow.brier);
  row("mass_below_0", res.chained.mass_low, res.flow.mass_low);
  row("mass_above_0", res.chained.mass_high, res.flow.mass_high);
  ctx.csv("mi_reconstruction.csv", recon);

  CsvTable coef({"term", "truth", "chained_estimate", "chained_se", "flow_estimate", "flow_se"});
  const char* terms[] = {"intercept", "x1", "x2", "x3"};
  for (std::size_t j = 0; j < 4; ++j)
    coef.row({terms[j], cell(res.beta_true[j]), cell(res.chained.rubin.theta[j]),
              cell(std::sqrt(res.chained.rubin.t(j, j))), cell(res.flow.rubin.theta[j]),
              cell(std::sqrt(res.flow.rubin.t(j, j)))});
  ctx.csv("mi_coefficients.csv", coef);

  CsvTable draws({"source", "x3"});
  for (double v : res.truth) draws.row({"truth", cell(v)});
  for (double v : res.chained.pooled) draws.row({"chained", cell(v)});
  for (double v : res.flow.pooled) draws.row({"flow", cell(v)});
  ctx.csv("mi_imputations.csv", draws);

  const auto [lo, hi] = finite_range({&res.truth, &res.chained.pooled, &res.flow.pooled});
  SvgFigure fig(300, 260);
  const auto ht = histogram(res.truth, lo, hi, 40);
  const auto hc = histogram(res.chained.pooled, lo, hi, 40);
  const auto hf = histogram(res.flow.pooled, lo, hi, 40);
  fig.add_panel("Held-back X3").bars(ht.first, ht.second, "#444444");
  fig.add_panel("Chained imputations").bars(hc.first, hc.second, "#d62728");
  fig.add_panel("Flow imputations").bars(hf.first, hf.second, "#1f77b4");
  ctx.svg("mi_imputations.svg", fig);
  add_metrics(ctx, {{"missing_rate", res.realized_rate},
                    {"w1_chained", res.chained.w1},
                    {"w1_flow", res.flow.w1},
                    {"flow_mass_below_0", res.flow.mass_low},
                    {"flow_mass_above_0", res.flow.mass_high}});
}

void run_ate(Params& p, std::optional<std::size_t> reps, RngStream& rng, Context& ctx) {
  ex::AteStudyConfig c;
  c.n = p.count("n", c.n);
  c.reps = reps ? *reps : p.count("reps", c.reps);
  c.folds = p.count("folds", c.folds);
  if (c.folds < 2) config_error("ate-ddml: folds must be at least 2");
  c.tau = p.real("tau", c.tau);
  c.clip = p.unit("clip", c.clip);
  if (c.clip >= 0.5) config_error("ate-ddml: clip must be below 0.5");
  c.dr_n = p.count("dr_n", c.dr_n);
  const std::size_t orth_n = p.count("orthogonality_n", 20000);
  p.finish();

  RngStream study_rng = rng.child(0), orth_rng = rng.child(1);
  const auto res = ctx.stage("replicates", [&] { return ex::ate_study(c, study_rng); });
  const auto orth = ctx.stage("orthogonality", [&] { return ex::orthogonality_contrast(orth_n, orth_rng); });

  CsvTable t({"rep", "psi_hat", "se", "lo", "hi", "covered"});
  for (const auto& r : res.rows) t.row({cell(r.rep), cell(r.psi), cell(r.se), cell(r.lo), cell(r.hi), cell(r.covered)});
  ctx.csv("ate_replicates.csv", t);
  CsvTable dr({"case", "psi_hat", "se", "truth", "within_3se"});
  for (const auto& d : res.dr) dr.row({d.name, cell(d.psi), cell(d.se), cell(d.truth), cell(d.within_3se())});
  ctx.csv("ate_double_robustness.csv", dr);
  CsvTable ot({"direction", "aipw_slope", "naive_slope"});
  for (const auto& o : orth) ot.row({o.direction, cell(o.aipw_slope), cell(o.naive_slope)});
  ctx.csv("ate_orthogonality.csv", ot);
  ctx.csv("ate_summary.csv", metric_table({{"coverage", res.coverage}, {"tau", c.tau}}));

  SvgFigure fig(520, 300);
  auto& panel = fig.add_panel("95% intervals per replicate");
  panel.xlabel = "replicate";
  for (const auto& r : res.rows) {
    const double x = static_cast<double>(r.rep);
    panel.line({x, x}, {r.lo, r.hi}, r.covered ? "#1f77b4" : "#d62728");
  }
  const double last = res.rows.empty() ? 1.0 : static_cast<double>(res.rows.back().rep);
  panel.line({0.0, last}, {c.tau, c.tau}, "#000000", "true ATE");
  ctx.svg("ate_intervals.svg", fig);
  add_metrics(ctx, {{"coverage", res.coverage}});
  for (const auto& d : res.dr) ctx.summary()["dr_" + d.name + "_within_3se"] = d.within_3se();
}

std::string alpha_name(double a) {
  std::string s = format_double(a);
  return "qte_" + s;
}

void run_causal(Params& p, RngStream& rng, Context& ctx) {
  ex::CausalDemoConfig c;
  c.n = p.count("n", c.n);
  c.d = p.count("d", c.d);
  if (c.d < 3) config_error("causal-demo: d must be at least 3");
  c.kappa = p.positive("kappa", c.kappa);
  c.n_eval = p.count("n_eval", c.n_eval);
  c.alphas = p.reals("alphas", c.alphas);
  for (double a : c.alphas)
    if (!(a > 0.0 && a < 1.0)) config_error("causal-demo: alphas must lie in (0, 1)");
  c.folds = p.count("folds", c.folds);
  if (c.folds < 2) config_error("causal-demo: folds must be at least 2");
  read_cfm(p, c.cfm, false);
  read_ode(p, c.ode);
  read_train(p, "baseline_", c.baseline);
  p.finish();

  const auto res = ctx.stage("fit_and_sample", [&] { return ex::causal_demo(c, rng); });
  std::vector<std::string> header{"method", "ate", "ate_se"};
  for (double a : c.alphas) header.push_back(alpha_name(a));
  header.push_back("w1_do0");
  header.push_back("w1_do1");
  CsvTable t(header);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto add = [&](const std::string& name, const ex::InterventionalSummary& s, double se) {
    std::vector<std::string> r{name, cell(s.ate), cell(se)};
    for (double q : s.qte) r.push_back(cell(q));
    r.push_back(cell(s.w1_0));
    r.push_back(cell(s.w1_1));
    t.row(std::move(r));
  };
  add("truth", res.truth, nan);
  add("baseline", res.baseline, nan);
  add("flow", res.flow, nan);
  {
    std::vector<std::string> r{"aipw", cell(res.aipw.psi), cell(res.aipw.se)};
    for (std::size_t k = 0; k < c.alphas.size() + 2; ++k) r.push_back(cell(nan));
    t.row(std::move(r));
  }
  ctx.csv("causal_summary.csv", t);

  CsvTable qq({"arm", "p", "truth", "baseline", "flow"});
  SvgFigure fig;
  for (int arm = 0; arm < 2; ++arm) {
    const auto& tr = arm ? res.truth.y1 : res.truth.y0;
    const auto qb = diag::qq_points(tr, arm ? res.baseline.y1 : res.baseline.y0, 100);
    const auto qf = diag::qq_points(tr, arm ? res.flow.y1 : res.flow.y0, 100);
    std::vector<double> xt, yb, yf;
    for (std::size_t k = 0; k < qb.size(); ++k) {
      qq.row({cell(static_cast<std::size_t>(arm)), cell((static_cast<double>(k) + 0.5) / 100.0), cell(qb[k].first),
              cell(qb[k].second), cell(qf[k].second)});
      xt.push_back(qb[k].first), yb.push_back(qb[k].second), yf.push_back(qf[k].second);
    }
    auto& panel = fig.add_panel(arm ? "QQ against truth, do(A=1)" : "QQ against truth, do(A=0)");
    panel.xlabel = "true quantile";
    panel.ylabel = "sampler quantile";
    panel.diagonal = true;
    panel.line(xt, yb, "#d62728", "baseline").line(xt, yf, "#1f77b4", "flow");
  }
  ctx.csv("causal_qq.csv", qq);
  ctx.svg("causal_qq.svg", fig);
  const std::vector<std::pair<std::string, double>> m{{"baseline_top_decile_gap", res.baseline_top_gap},
                                                      {"flow_top_decile_gap", res.flow_top_gap},
                                                      {"propensity_min", res.propensity_min},
                                                      {"propensity_max", res.propensity_max}};
  ctx.csv("causal_diagnostics.csv", metric_table(m));
  add_metrics(ctx, m);
  add_metrics(ctx, {{"w1_do1_baseline", res.baseline.w1_1},
                    {"w1_do1_flow", res.flow.w1_1},
                    {"ate_truth", res.truth.ate},
                    {"ate_baseline", res.baseline.ate},
                    {"ate_flow", res.flow.ate},
                    {"aipw_se", res.aipw.se}});
}

using Runner = std::function<void(Params&, std::optional<std::size_t>, RngStream&, Context&)>;

const std::map<std::string, std::pair<bool, Runner>>& table() {
  // name -> (accepts --reps, runner)
  static const std::map<std::string, std::pair<bool, Runner>> t{
      {"ggm-bench", {true, run_ggm}},
      {"quartic-sm", {false, [](Params& p, auto, RngStream& r, Context& c) { run_quartic(p, r, c); }}},
      {"cfm-train", {false, [](Params& p, auto, RngStream& r, Context& c) { run_cfm_train(p, r, c); }}},
      {"cfm-sample", {false, [](Params& p, auto, RngStream& r, Context& c) { run_cfm_sample(p, r, c); }}},
      {"coupling-compare", {false, [](Params& p, auto, RngStream& r, Context& c) { run_coupling(p, r, c); }}},
      {"lipschitz-map", {false, [](Params& p, auto, RngStream& r, Context& c) { run_lipschitz(p, r, c); }}},
      {"ksd-test", {true, run_ksd}},
      {"linreg-semipar", {true, run_linreg}},
      {"copula-demo", {false, [](Params& p, auto, RngStream& r, Context& c) { run_copula(p, r, c); }}},
      {"mi-demo", {false, [](Params& p, auto, RngStream& r, Context& c) { run_mi(p, r, c); }}},
      {"ate-ddml", {true, run_ate}},
      {"causal-demo", {false, [](Params& p, auto, RngStream& r, Context& c) { run_causal(p, r, c); }}},
  };
  return t;
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [k, _] : table()) v.push_back(k);
    return v;
  }();
  return names;
}

json RunManifest::to_json() const {
  json t = json::array();
  for (const auto& s : timings) t.push_back({{"stage", s.stage}, {"seconds", s.seconds}});
  return json{{"schema_version", schema_version},
              {"library_version", library_version},
              {"subcommand", subcommand},
              {"config", config},
              {"timings", t},
              {"files", files},
              {"columns", columns},
              {"summary", summary}};
}

json load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) config_error("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    config_error("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

RunManifest run(const RunOptions& opts) {
  const auto it = table().find(opts.subcommand);
  if (it == table().end()) {
    std::string list;
    for (const auto& s : subcommands()) list += (list.empty() ? "" : ", ") + s;
    config_error("unknown subcommand '" + opts.subcommand + "' (expected one of " + list + ")");
  }
  if (!opts.config.is_object()) config_error("config must be a JSON object");
  const auto& [accepts_reps, runner] = it->second;
  if (opts.reps && !accepts_reps) config_error(opts.subcommand + ": --reps does not apply");
  if (opts.reps && *opts.reps == 0) config_error("--reps must be positive");
  if (opts.threads && *opts.threads <= 0) config_error("--threads must be positive");

  // Shared keys are peeled off before the subcommand sees the object.
  json body = opts.config;
  if (body.contains("subcommand")) {
    if (!body["subcommand"].is_string() || body["subcommand"] != opts.subcommand)
      config_error("config names subcommand " + body["subcommand"].dump() + " but '" + opts.subcommand + "' was run");
    body.erase("subcommand");
  }
  std::uint64_t seed = 1;
  if (body.contains("seed")) {
    if (!body["seed"].is_number_unsigned() && !(body["seed"].is_number_integer() && body["seed"].get<std::int64_t>() >= 0))
      config_error("config key 'seed' must be a non-negative integer");
    seed = body["seed"].get<std::uint64_t>();
    body.erase("seed");
  }
  if (opts.seed) seed = *opts.seed;
  fs::path out = fs::path("fmstat-out") / opts.subcommand;
  if (body.contains("out")) {
    if (!body["out"].is_string()) config_error("config key 'out' must be a string");
    out = body["out"].get<std::string>();
    body.erase("out");
  }
  if (opts.out) out = *opts.out;
  std::optional<int> threads = opts.threads;
  if (body.contains("threads")) {
    if (!body["threads"].is_number_integer() || body["threads"].get<int>() <= 0)
      config_error("config key 'threads' must be a positive integer");
    if (!threads) threads = body["threads"].get<int>();
    body.erase("threads");
  }
  if (threads) kernels::set_threads(*threads);

  RunManifest m;
  m.subcommand = opts.subcommand;
  m.library_version = FMSTAT_VERSION;
  m.out_dir = out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) config_error("cannot create output directory '" + out.string() + "': " + ec.message());

  Params params(body, opts.subcommand);
  Context ctx(out, m);
  RngStream rng(seed, 0);
  try {
    runner(params, opts.reps, rng, ctx);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid || e.code() == ErrorCode::ExperimentFailed) throw;
    fail(ErrorCode::ExperimentFailed, opts.subcommand + " failed with " + e.what());
  } catch (const std::exception& e) {
    fail(ErrorCode::ExperimentFailed, opts.subcommand + " failed: " + e.what());
  }
  m.config = params.effective();
  m.config["seed"] = seed;
  m.config["out"] = out.string();
  m.config["threads"] = kernels::max_threads();
  if (opts.reps) m.config["reps"] = *opts.reps;

  std::ofstream f(out / "manifest.json", std::ios::binary);
  f << m.to_json().dump(2) << "\n";
  if (!f.good()) fail(ErrorCode::ExperimentFailed, "cannot write manifest.json");
  return m;
}

std::string error_json(ErrorCode code, const std::string& message) {
  return json{{"error", {{"code", std::string(to_string(code))}, {"message", message}}}}.dump();
}

std::string error_json(const Error& e) {
  // Strip the "Code: " prefix the exception adds to what().
  std::string msg = e.what();
  const std::string prefix = std::string(to_string(e.code())) + ": ";
  if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
  return error_json(e.code(), msg);
}

}  // namespace fmstat::cli
