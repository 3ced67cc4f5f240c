#pragma once

// Data-generating processes and study drivers shared by the fmstat CLI and
// the acceptance suite. Every driver is deterministic given its RngStream.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmstat/copula.hpp"
#include "fmstat/flow.hpp"
#include "fmstat/inference.hpp"
#include "fmstat/matrix.hpp"
#include "fmstat/missing.hpp"
#include "fmstat/mlp.hpp"
#include "fmstat/rng.hpp"
#include "fmstat/scorematch.hpp"

namespace fmstat::experiments {

/// Root mean square of the elementwise difference. Throws DimensionMismatch.
double rmse(const Matrix& a, const Matrix& b);
/// Mean and sample standard deviation (n - 1 denominator).
std::pair<double, double> mean_sd(std::span<const double> v);

// ---- GGM benchmark ----

struct GgmBenchConfig {
  std::size_t d = 200, n = 120, reps = 10;
  // K*: each off-diagonal pair is an edge with probability edge_prob and
  // weight +-U(edge_lo, edge_hi); the diagonal is set to
  // diag_margin - lambda_min(offdiag part).
  double edge_prob = 0.01, edge_lo = 0.2, edge_hi = 0.5, diag_margin = 0.05;
  // Common stopping rule for both estimators.
  std::size_t max_iter = 500;
  double tol = 1e-6;
  std::vector<double> lambda_grid{0.1, 0.15, 0.2, 0.3};
  std::vector<double> rho_grid{0.0, 0.01, 0.05};
  std::vector<double> alpha_grid{0.1, 0.15, 0.2};
  // When all three are set the pilot tuning step is skipped.
  std::optional<double> lambda, rho, alpha;
};

Matrix ggm_true_precision(const GgmBenchConfig& cfg, RngStream& rng);
/// Centred sample covariance of n draws from N(0, Sigma), Sigma = L L^T.
Matrix ggm_sample_covariance(const Matrix& sigma_lower, std::size_t n, RngStream& rng);

struct GgmRep {
  std::size_t rep = 0;
  double rmse_sm = 0.0, ct_sm = 0.0;
  std::size_t iter_sm = 0;
  double rmse_mle = 0.0, ct_mle = 0.0;
  std::size_t iter_mle = 0;
};

struct GgmBenchResult {
  double lambda = 0.0, rho = 0.0, alpha = 0.0;
  double tune_seconds = 0.0, total_seconds = 0.0;
  std::vector<GgmRep> reps;

  std::size_t sm_rmse_wins() const;
  std::size_t sm_time_wins() const;
};

/// Draws K* once, tunes (lambda, rho) and alpha by oracle RMSE on one pilot
/// covariance, then runs `reps` fresh covariances through both estimators.
GgmBenchResult ggm_bench(const GgmBenchConfig& cfg, RngStream& rng);

// ---- Quartic score matching ----

struct QuarticDemoResult {
  score::QuarticTheta theta;
  double objective = 0.0;
  std::size_t n = 0;
};

/// Fit on n standard normal draws.
QuarticDemoResult quartic_demo(std::size_t n, RngStream& rng);

// ---- 1-D flow matching benchmark ----

struct CfmGaussianConfig {
  double mean = 2.0, sd = 0.5;
  std::size_t n_train = 5000, n_sample = 5000;
  flow::CfmConfig cfm;
  flow::OdeConfig ode{100, flow::Scheme::Rk4, flow::Direction::Forward};

  CfmGaussianConfig();
};

struct CfmGaussianResult {
  flow::CfmResult fit;
  Vector generated, reference;
  double w1 = 0.0;
};

/// Trains on N(mean, sd^2) draws and compares n_sample generated points with
/// a fresh target sample of the same size.
CfmGaussianResult cfm_gaussian_benchmark(const CfmGaussianConfig& cfg, RngStream& rng);

// ---- Coupling comparison ----

struct CouplingCompareConfig {
  std::size_t batches = 400, m = 64;
  double cluster = 2.0, cluster_sd = 0.3;  // data: +-cluster + cluster_sd * xi
  std::size_t t_bins = 10;
  double x_bin_width = 0.5;
  std::size_t min_count = 20;
};

struct CouplingBin {
  int t_bin = 0, x_bin = 0;
  std::size_t n_ind = 0, n_ot = 0;
  double var_ind = 0.0, var_ot = 0.0;
};

struct CouplingCompareResult {
  std::vector<CouplingBin> bins;  // bins where both couplings reach min_count
  std::size_t lower = 0;          // bins with var_ot < var_ind
  double cost_ind = 0.0, cost_ot = 0.0;  // mean squared pairing distance

  double fraction_lower() const;
};

/// Teacher signal u = x1 - x0 along the linear path, binned by (t, x_t),
/// under independent and exact-assignment minibatch pairing of a standard
/// normal base with a two-cluster target.
CouplingCompareResult coupling_compare(const CouplingCompareConfig& cfg, RngStream& rng);

// ---- Lipschitz / sensitivity map ----

struct LipschitzMapConfig {
  std::size_t n = 2000;
  double outlier_frac = 0.05, outlier_scale = 8.0;
  double lipschitz_cap = 1.5;  // bound on the product of layer norms
  std::size_t grid = 9;        // per axis on [-extent, extent]^2
  double extent = 3.0;
  double delta = 1e-4;
  std::size_t probes = 8;
  flow::CfmConfig cfm;
  flow::OdeConfig ode{50, flow::Scheme::Rk4, flow::Direction::Forward};

  LipschitzMapConfig();
};

struct LipschitzCell {
  double x = 0.0, y = 0.0;
  double ratio_free = 0.0, ratio_clamped = 0.0;
};

struct LipschitzMapResult {
  std::vector<LipschitzCell> cells;
  double bound_free = 0.0, bound_clamped = 0.0;  // network Lipschitz upper bounds
  double max_free = 0.0, max_clamped = 0.0;
};

/// 2-D data N(0, I) with a fraction of points scaled by outlier_scale. Two
/// fields are trained on the same data: one unconstrained, one with every
/// layer clamped to lipschitz_cap^(1 / layers).
LipschitzMapResult lipschitz_map(const LipschitzMapConfig& cfg, RngStream& rng);

// ---- KSD level and power ----

struct KsdStudyConfig {
  std::size_t n = 200, d = 2, b = 300, reps = 200;
  double shift = 1.0, alpha = 0.05;
};

struct KsdStudyRow {
  std::size_t rep = 0;
  double stat_null = 0.0, p_null = 1.0, stat_alt = 0.0, p_alt = 1.0;
};

struct KsdStudyResult {
  std::vector<KsdStudyRow> rows;
  double null_rate = 0.0, power = 0.0;
};

/// Wild-bootstrap KSD test of N(0, I) against samples from N(0, I) and from
/// N(shift * 1, I), bandwidth by the median heuristic.
KsdStudyResult ksd_study(const KsdStudyConfig& cfg, RngStream& rng);

// ---- Semiparametric linear regression ----

struct LinregStudyConfig {
  std::size_t n = 300, reps = 200, folds = 5;
  double noise = 1.0;
  bool skewed = true;  // centred Exp(1) errors, otherwise N(0, 1)
};

struct LinregStudyRow {
  std::size_t rep = 0;
  Vector ols, semi;
  bool scale_fallback = false;
  double fixed_gap = 0.0;  // max |beta(0, 3) - OLS|
};

struct LinregStudyResult {
  Vector beta_true;
  std::vector<LinregStudyRow> rows;
  double mse_ols = 0.0, mse_semi = 0.0;  // summed over coefficients, averaged over reps
  double max_fixed_gap = 0.0;
};

/// y = 1 + 2 x1 - x2 + noise * e with x1 ~ N(0, 1), x2 ~ U(-1, 1).
LinregStudyResult linreg_study(const LinregStudyConfig& cfg, RngStream& rng);

// ---- Copula demo ----

enum class CopulaDgp { Gaussian, SShape };
std::string to_string(CopulaDgp g);
CopulaDgp copula_dgp_from_string(const std::string& s);

struct CopulaDemoConfig {
  CopulaDgp dgp = CopulaDgp::Gaussian;
  double rho = 0.5;  // Gaussian DGP correlation
  std::size_t n = 3000, n_sample = 5000;
  copula::Transform transform = copula::Transform::Logit;
  copula::CopulaConfig copula;
};

struct CopulaDemoResult {
  Matrix data, pseudo, sample;
  double tau_data = 0.0, tau_sample = 0.0;
  double tau_theory = 0.0;  // (2 / pi) asin(rho) for the Gaussian DGP, NaN otherwise
  double ks_u1 = 0.0, ks_u2 = 0.0;
  bool invariance_exact = false;  // pseudo-obs unchanged under strictly increasing maps
};

/// Gaussian: (Z1, rho Z1 + sqrt(1 - rho^2) Z2) with margins exp and cube.
/// SShape: Z2 = 0.8 (Z1^2 - 1) + 0.4 xi.
Matrix copula_dgp_draw(const CopulaDemoConfig& cfg, std::size_t n, RngStream& rng);
CopulaDemoResult copula_demo(const CopulaDemoConfig& cfg, RngStream& rng);

// ---- Multiple-imputation demo ----

struct MiDemoConfig {
  std::size_t n = 3000;
  double rate = 0.359;  // target P(M3 = 1)
  std::size_t imputations = 10, sweeps = 10;
  missing::ImputerConfig flow;
};

/// Columns X1, X2, X3, Y with X1, X2 ~ N(0, 1), s = +-1 with
/// P(s = 1) = logistic(1.5 X1), X3 = s (1.2 + 0.3 X2) + 0.35 xi and
/// Y = 0.5 X1 + 0.8 X2 + X3 + N(0, 1).
Matrix mi_dgp_draw(std::size_t n, RngStream& rng);
/// Coefficients of Y on (1, standardized X1..X3): (0, 0.5, 0.8, sd(X3)).
Vector mi_true_beta();
/// Regression of Y on an intercept and the standardized X columns. Slope
/// variances are the classical OLS ones; the intercept variance is
/// var(Y) / n because the intercept equals mean(Y) under random design.
missing::Analysis mi_analysis();

struct MiEngineSummary {
  missing::Engine engine = missing::Engine::Flow;
  missing::RubinResult rubin;
  Vector pooled;  // imputed X3 over missing rows, all imputations
  double rmse = 0.0;   // mean imputation against the held-back truth
  double w1 = 0.0;     // pooled imputations against the held-back truth
  double brier = 0.0;  // for 1{X3 > 0}, from the imputation frequency
  double mass_low = 0.0, mass_high = 0.0;  // pooled fractions below / above 0
};

struct MiDemoResult {
  double realized_rate = 0.0;
  Vector truth;  // X3 on missing rows
  Vector beta_true;
  MiEngineSummary chained, flow;
};

/// MAR mask on X3 with logistic(w0 + 0.5 X1 - 0.5 X2), w0 set for `rate`.
MiDemoResult mi_demo(const MiDemoConfig& cfg, RngStream& rng);

// ---- DDML coverage study ----

struct AteStudyConfig {
  std::size_t n = 400, reps = 200, folds = 5;
  double tau = 1.5, clip = 0.01;
  std::size_t dr_n = 4000;  // double-robustness checks
};

struct AteStudyRow {
  std::size_t rep = 0;
  double psi = 0.0, se = 0.0, lo = 0.0, hi = 0.0;
  bool covered = false;
};

struct DrCheck {
  std::string name;
  double psi = 0.0, se = 0.0, truth = 0.0;
  bool within_3se() const;
};

struct AteStudyResult {
  std::vector<AteStudyRow> rows;
  double coverage = 0.0;
  std::vector<DrCheck> dr;  // mu wrong, e wrong, both wrong
};

/// Randomized design e = 1/2, y = 0.8 x1 - 0.4 x2 + tau a + N(0, 1); the
/// double-robustness checks use the observational design of
/// observational_data.
AteStudyResult ate_study(const AteStudyConfig& cfg, RngStream& rng);

/// x ~ N(0, I_2), e = logistic(0.5 x1 - 0.5 x2), mu0 = x1 + 0.5 x2,
/// tau(x) = 1 + 0.5 x1, N(0, noise^2) errors. ATE = 1.
inference::CausalData observational_data(std::size_t n, double noise, RngStream& rng);
inference::Nuisance observational_truth();

struct OrthogonalityRow {
  std::string direction;
  double aipw_slope = 0.0, naive_slope = 0.0;
};

/// Finite-difference slopes of the AIPW and naive mean moments at the true
/// nuisances of the observational design, in directions mu1, mu0, and two
/// propensity perturbations.
std::vector<OrthogonalityRow> orthogonality_contrast(std::size_t n, RngStream& rng);

// ---- Interventional-distribution demo ----

struct CausalDemoConfig {
  std::size_t n = 4000, d = 10;
  double kappa = 1.6;
  std::size_t n_eval = 20000;  // draws from p(x) for truth and both samplers
  std::vector<double> alphas{0.1, 0.5, 0.9};
  std::size_t folds = 5;
  flow::CfmConfig cfm;
  flow::OdeConfig ode{60, flow::Scheme::Rk4, flow::Direction::Forward};
  nn::TrainConfig baseline;

  CausalDemoConfig();
};

/// Components of the outcome model Y(a) = f(x) + tau(x) a + s(x, a) eps(x, a).
struct CausalDgp {
  double kappa = 1.6;
  std::size_t d = 10;

  double f(std::span<const double> x) const;
  double tau(std::span<const double> x) const;  // 1 + 0.5 sin(x1) + 0.3 x2^2, mean 1.3
  double scale(std::span<const double> x, double a) const;
  double tail_prob(std::span<const double> x, double a) const;
  double propensity(std::span<const double> x) const;
  double noise(std::span<const double> x, double a, RngStream& rng) const;
  double outcome(std::span<const double> x, double a, RngStream& rng) const;
  Matrix draw_x(std::size_t n, RngStream& rng) const;
  inference::CausalData draw(std::size_t n, RngStream& rng) const;
  double true_ate() const { return 1.3; }
};

struct InterventionalSummary {
  Vector y0, y1;
  double ate = 0.0;
  Vector qte;  // per alpha
  double w1_0 = 0.0, w1_1 = 0.0;  // against the truth (zero for the truth)
};

struct CausalDemoResult {
  InterventionalSummary truth, baseline, flow;
  inference::AteReport aipw;  // cross-fitted AIPW on the observed data, SE yardstick
  double baseline_top_gap = 0.0, flow_top_gap = 0.0;  // do(1), mean truth - estimate over top-decile QQ points
  double propensity_min = 0.0, propensity_max = 0.0;
};

CausalDemoResult causal_demo(const CausalDemoConfig& cfg, RngStream& rng);

/// Mean of (truth - estimate) over QQ points with probability >= 0.9 on a
/// 100-point grid.
double top_decile_gap(std::span<const double> truth, std::span<const double> estimate);

}  // namespace fmstat::experiments
