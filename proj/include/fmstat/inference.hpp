#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fmstat/matrix.hpp"
#include "fmstat/rng.hpp"

namespace fmstat::inference {

/// Observations (x_i, a_i, y_i) with binary treatment a_i in {0, 1}.
struct CausalData {
  Matrix x;
  Vector a;
  Vector y;

  std::size_t size() const noexcept { return y.size(); }
  /// Throws DimensionMismatch / InvalidArgument for a not in {0, 1}.
  void validate() const;
  CausalData subset(std::span<const std::size_t> rows) const;
};

// ---- Folds ----

struct FoldPlan {
  std::size_t n = 0, k = 0;
  std::vector<std::size_t> fold;  // fold id in [0, k) per row

  std::vector<std::size_t> members(std::size_t f) const;
  std::vector<std::size_t> complement(std::size_t f) const;
};

/// Balanced random partition. Throws BadK unless 2 <= k <= n.
FoldPlan fold_split(std::size_t n, std::size_t k, RngStream& rng);

// ---- Nuisances and AIPW ----

using RegressionFn = std::function<double(std::span<const double>)>;

struct Nuisance {
  RegressionFn mu0, mu1, e;
  double clip = 0.01;  // propensities are clamped to [clip, 1 - clip]

  double propensity(std::span<const double> x) const;
};

/// Fits nuisances from training rows only; cross-fitting hands it the
/// complement of the evaluation fold and nothing else.
using NuisanceLearner = std::function<Nuisance(const CausalData& train, RngStream& rng)>;

/// mu1 - mu0 + a (y - mu1) / e - (1 - a)(y - mu0) / (1 - e), the AIPW score
/// without the -psi term (also the CATE pseudo-outcome).
double aipw_term(std::span<const double> x, double a, double y, const Nuisance& nu);
/// aipw_term - psi.
double aipw_score(std::span<const double> x, double a, double y, double psi, const Nuisance& nu);

struct AteReport {
  double psi = 0.0;
  double se = 0.0;
  double lo = 0.0, hi = 0.0;
  std::vector<double> fold_means;
  std::size_t n = 0;

  std::string to_json() const;
};

/// Cross-fitted AIPW estimate: psi solves the pooled mean score, SE is the
/// score SD over sqrt(n), CI is psi +- 1.96 SE. Throws ArmMissing when a
/// training complement lacks a treatment arm, BadK for bad fold counts.
AteReport ate_crossfit(const CausalData& data, std::size_t k, const NuisanceLearner& learner, double clip,
                       RngStream& rng);

/// AIPW pseudo-outcomes for second-stage CATE regression.
Vector cate_pseudo_outcomes(const CausalData& data, const Nuisance& nu);

/// (mean a y / e, mean (1 - a) y / (1 - e)) with e clamped to [clip, 1 - clip].
std::pair<double, double> ipw_means(const CausalData& data, const RegressionFn& e, double clip = 0.01);

/// Mean of mu(x_i) over the sample.
double gformula_mean(const CausalData& data, const RegressionFn& mu);

// ---- Learners ----

/// Logistic regression by Newton's method on the given design (no intercept
/// is added). Throws SingularDesign.
Vector logistic_fit(const Matrix& design, std::span<const double> labels, std::size_t max_iter = 50);

/// Design [1, x].
Matrix with_intercept(const Matrix& x);

enum class OutcomeModel { Linear, Zero };
enum class PropensityModel { Logistic, Constant };

/// Per-arm OLS on [1, x] (or mu = 0) and logistic propensity on [1, x] (or
/// the training treated fraction).
NuisanceLearner linear_learner(OutcomeModel outcome = OutcomeModel::Linear,
                               PropensityModel propensity = PropensityModel::Logistic);
/// Ignores the data and returns fixed functions.
NuisanceLearner fixed_learner(Nuisance nu);

// ---- Semiparametric linear regression ----

struct EffScoreCoef {
  double mu3 = 0.0, mu4 = 3.0;
  double b = -1.0, c = 0.0;

  /// b e + c (e^2 - 1)
  double project(double e) const noexcept { return b * e + c * (e * e - 1.0); }
};

/// Coefficients from fixed standardized moments. Throws DegenerateMoments
/// when mu4 - 1 - mu3^2 <= 1e-8.
EffScoreCoef eff_coef_from_moments(double mu3, double mu4);
/// Standardizes the residuals (centre, unit second moment) and uses their
/// third and fourth moments.
EffScoreCoef residual_eff_coeffs(std::span<const double> residuals);

struct LinregScores {
  Vector psi_beta;
  double psi_sigma2 = 0.0;
};

/// Efficient scores at (beta, sigma2) for one observation.
LinregScores efficient_scores_linreg(std::span<const double> x, double y, std::span<const double> beta, double sigma2,
                                     const EffScoreCoef& coef);

struct SemiparamConfig {
  std::optional<std::pair<double, double>> fixed_moments;  // (mu3, mu4)
  std::size_t newton_iters = 100;
  double tol = 1e-12;
};

struct SemiparamFit {
  Vector beta;
  double sigma2 = 0.0;
  Vector se_beta;
  double se_sigma2 = 0.0;
  Vector ols_beta;
  std::vector<EffScoreCoef> fold_coef;
  bool scale_fallback = false;  // scale equation had no root; sigma2 is the OLS value
};

/// Cross-fitted efficient-score fit of y = x^T beta + sigma e. Residual
/// moments come from OLS on each fold's complement; the pooled estimating
/// equations over all folds are solved by damped Newton from the OLS start,
/// with sandwich standard errors. When the scale equation has no root the
/// beta equations are solved at the OLS scale instead. x must already
/// contain any intercept.
/// Throws SingularDesign.
SemiparamFit semiparam_linreg_fit(const Matrix& x, std::span<const double> y, std::size_t k,
                                  const SemiparamConfig& cfg, RngStream& rng);

// ---- Orthogonality ----

struct OrthogonalitySlope {
  double linear = 0.0;
  double quadratic = 0.0;
};

/// Least-squares quadratic fit of m(eps) over the grid; `linear` is the
/// first-order coefficient. Throws InvalidArgument for an asymmetric grid.
OrthogonalitySlope orthogonality_fd_check(const std::function<double(double)>& mean_moment,
                                          std::span<const double> eps_grid);

/// Mean AIPW score and the two naive moments (outcome regression and IPW).
double aipw_mean_moment(const CausalData& data, double psi, const Nuisance& nu);
double gformula_moment(const CausalData& data, double psi, const Nuisance& nu);
double ipw_moment(const CausalData& data, double psi, const Nuisance& nu);

}  // namespace fmstat::inference
