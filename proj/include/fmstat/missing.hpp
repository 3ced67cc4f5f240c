#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fmstat/flow.hpp"
#include "fmstat/matrix.hpp"
#include "fmstat/rng.hpp"

namespace fmstat::missing {

/// Data matrix with a missingness mask. The mask is authoritative; masked
/// cells of `x` hold NaN so that any accidental read poisons the result.
struct MaskedDataset {
  Matrix x;
  Matrix m;  // 1 = missing, 0 = observed

  static MaskedDataset complete(Matrix x);

  std::size_t rows() const noexcept { return x.rows(); }
  std::size_t cols() const noexcept { return x.cols(); }
  bool missing(std::size_t i, std::size_t j) const noexcept { return m(i, j) != 0.0; }
  std::size_t missing_count(std::size_t j) const;
  std::vector<std::size_t> observed_rows(std::size_t j) const;
  std::vector<std::size_t> missing_rows(std::size_t j) const;
  /// Rows whose only missing cell (if any) is column j.
  std::vector<std::size_t> rows_missing_only(std::size_t j) const;
  /// Throws DimensionMismatch and InvalidArgument (mask not 0/1, observed
  /// cell not finite).
  void validate() const;
};

/// Masks column `target` with P(M = 1 | x) = logistic(w0 + sum_j w_j x_j).
/// Throws BadColumns when a weight references the target column, a column
/// index is out of range, or a weighted column holds non-finite values.
MaskedDataset mar_mask(const Matrix& x, std::size_t target, std::span<const double> weights, double w0,
                       RngStream& rng);

/// Intercept w0 for which the mean mask probability over the rows of x
/// equals `rate` (bisection).
double mar_intercept_for_rate(const Matrix& x, std::span<const double> weights, double rate);

// ---- Imputation engines ----

struct ImputerConfig {
  flow::CfmConfig cfm;
  flow::OdeConfig ode{60, flow::Scheme::Rk4, flow::Direction::Forward};
  std::size_t min_complete = 50;

  ImputerConfig();
};

/// Conditional flow sampler for one column given all other columns, fitted
/// on standardized complete rows.
struct FlowImputer {
  flow::FlowModel model;
  std::size_t target = 0;
  std::vector<std::size_t> predictors;
  Vector cond_mean, cond_sd;
  double y_mean = 0.0, y_sd = 1.0;
  flow::OdeConfig ode;

  /// One draw per row of `cond` (original scale, predictor columns only).
  Vector sample(const Matrix& cond, RngStream& rng) const;
};

/// Throws TooFewComplete when fewer than cfg.min_complete rows have every
/// column observed.
FlowImputer fm_imputer_train(const MaskedDataset& md, std::size_t target, const ImputerConfig& cfg, RngStream& rng);

/// Fills the rows whose only missing cell is the imputer's target column.
Matrix fm_impute(const MaskedDataset& md, const FlowImputer& imp, RngStream& rng);

/// Chained linear-Gaussian regressions: missing cells start at the observed
/// column mean, then each sweep redraws every incomplete column from a
/// posterior draw of its regression on all other columns. Throws
/// TooFewComplete when an incomplete column has fewer than 50 observed rows.
Matrix chained_gaussian_impute(const MaskedDataset& md, std::size_t sweeps, RngStream& rng);

// ---- Multiple imputation ----

struct RubinResult {
  Vector theta;  // mean estimate
  Matrix v_bar;  // within-imputation variance
  Matrix b;      // between-imputation variance
  Matrix t;      // v_bar + (1 + 1/K) b
  std::size_t k = 0;
};

/// Throws TooFewImputations (K < 2) and DimensionMismatch.
RubinResult rubin_combine(std::span<const Vector> estimates, std::span<const Matrix> variances);

/// Complete-data analysis: (estimate, variance).
using Analysis = std::function<std::pair<Vector, Matrix>(const Matrix& completed)>;

/// OLS of column `response` on an intercept and the remaining columns with the
/// classical covariance s^2 (X^T X)^{-1}. With `standardize`, every column is
/// centred and scaled to unit sample SD first.
Analysis ols_analysis(std::size_t response, bool standardize);

enum class Engine { Flow, Chained };
std::string to_string(Engine e);
Engine engine_from_string(const std::string& s);

struct MiConfig {
  Engine engine = Engine::Flow;
  std::size_t imputations = 10;
  std::size_t sweeps = 10;  // chained engine
  ImputerConfig flow;
};

struct MiResult {
  RubinResult rubin;
  std::vector<Matrix> completed;
};

/// K completed datasets, one analysis each, combined by Rubin's rules. With
/// no missing cells the single complete-data analysis is returned with B = 0.
/// The flow engine covers columns whose missing rows have every other column
/// observed and at least cfg.flow.min_complete complete rows; other cells go
/// through the chained engine.
MiResult mi_pipeline(const MaskedDataset& md, const MiConfig& cfg, const Analysis& analysis, RngStream& rng);

// ---- MNAR sensitivity ----

struct TiltValue {
  double a = 0.0;        // log mean exp(eta l)
  double a_prime = 0.0;  // tilted mean of l
};

/// Log-sum-exp evaluation over the sample of l values.
TiltValue tilt_log_normalizer(std::span<const double> ell, double eta);

struct TiltSolution {
  double eta = 0.0;
  double a = 0.0;
  double kl = 0.0;  // eta A'(eta) - A(eta)
};

/// Smallest eta >= 0 with KL(eta) = rho, by bisection on [0, 50 / sd(l)] to
/// |KL - rho| < 1e-8. Throws InvalidArgument (rho < 0), NoSolutionInBracket
/// when the cap is reached first (including constant l), and NoConvergence if
/// the evaluated KL values are not monotone.
TiltSolution solve_tilt(std::span<const double> ell, double rho);

}  // namespace fmstat::missing
