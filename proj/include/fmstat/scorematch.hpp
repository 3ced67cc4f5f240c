#pragma once

#include <functional>
#include <span>

#include "fmstat/matrix.hpp"
#include "fmstat/mlp.hpp"
#include "fmstat/rng.hpp"

namespace fmstat::score {

/// Vector field x -> f(x) on R^d.
using Field = std::function<Vector(std::span<const double>)>;
/// Jacobian-vector product (x, v) -> (df/dx)(x) v.
using Jvp = std::function<Vector(std::span<const double>, std::span<const double>)>;

/// Central finite-difference JVP with step h.
Jvp finite_difference_jvp(Field f, double h = 1e-5);
/// Exact JVP of the linear field x -> A x.
Jvp linear_jvp(Matrix a);

// ---- Quartic potential model p(x) ~ exp(t1 x + t2 x^2 + t3 x^4) ----

struct QuarticTheta {
  double t1 = 0.0, t2 = 0.0, t3 = 0.0;
};

double quartic_score(const QuarticTheta& th, double x) noexcept;
/// Mean of 1/2 s(x)^2 + s'(x). Throws EmptySample.
double quartic_sm_objective(const QuarticTheta& th, std::span<const double> samples);
/// Exact minimiser of the (quadratic) objective. Throws EmptySample and
/// SingularSystem.
QuarticTheta quartic_sm_fit(std::span<const double> samples);

// ---- Gaussian graphical model ----

struct GgmProblem {
  Matrix s;             // sample covariance
  double lambda = 0.0;  // off-diagonal l1 weight
  double rho = 0.0;     // ridge weight
  std::size_t max_iter = 500;
  double tol = 1e-9;    // stop when ||K_{t+1} - K_t||_F < tol
};

struct GgmEstimate {
  Matrix k;
  double shift = 0.0;  // multiple of I added to make K positive definite
  std::size_t iterations = 0;
  std::vector<double> objective;  // per-iterate objective, starting at K_0
};

/// 1/2 tr(KSK) - tr(K) + rho/2 ||K||_F^2 + lambda sum_{i!=j} |K_ij|.
double ggm_sm_objective(const Matrix& k, const GgmProblem& p);

/// Proximal gradient for the ridge-l1 score matching objective with step
/// 0.9 / (||S||_2 + rho), off-diagonal soft thresholding, symmetrisation and
/// a final minimum-eigenvalue shift.
GgmEstimate ggm_sm_prox_fit(const GgmProblem& p);

/// tr(SK) - logdet K + alpha sum_{i!=j} |K_ij|; +inf when K is not PD.
double glasso_objective(const Matrix& k, const Matrix& s, double alpha);

/// Proximal gradient on the penalised Gaussian likelihood with backtracking
/// (the step halves on Cholesky failure or insufficient decrease), so every
/// iterate is positive definite and the objective never increases.
GgmEstimate glasso_fit(const Matrix& s, double alpha, std::size_t iters, double tol = 1e-9);

// ---- Stein-type checks ----

/// Mean of eps^T J eps over Rademacher probes.
double hutchinson_divergence(const Jvp& jvp, std::span<const double> x, std::size_t probes, RngStream& rng);
double hutchinson_divergence(const Field& f, std::span<const double> x, std::size_t probes, RngStream& rng);

/// Divergence by central differences, one coordinate at a time.
double fd_divergence(const Field& f, std::span<const double> x, double h = 1e-5);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

/// Sample mean and standard error of s(X)^T f(X) + div f(X). Rows of
/// `samples` are draws. Throws EmptySample.
MeanSe stein_residual(const Field& score, const Field& f, const Matrix& samples);

/// Shrinkage term g of an estimator X + g(X), with its divergence.
struct Shrinkage {
  std::function<Vector(std::span<const double>)> value;
  std::function<double(std::span<const double>)> divergence;
};

Shrinkage james_stein_shrinkage(std::size_t d);
Shrinkage zero_shrinkage();

struct RiskEstimate {
  double risk_direct = 0.0, se_direct = 0.0;
  double risk_stein = 0.0, se_stein = 0.0;
  double combined_se() const;
};

/// Risk of X + g(X) for X ~ N(mu, I), by direct Monte Carlo and through
/// d + E[2 div g + ||g||^2]. Throws DimensionTooSmall for d < 3.
RiskEstimate james_stein_risk(std::span<const double> mu, std::size_t n_mc, RngStream& rng,
                              const Shrinkage* g = nullptr);

// ---- Denoising score matching ----

struct DsmResult {
  nn::Mlp model;
  double validation_loss = 0.0;
  double baseline_loss = 0.0;  // best constant predictor on the same validation set
};

/// Fits s(y) to the denoising target (x - y) / sigma^2 with y = x + sigma xi,
/// drawing fresh noise for every minibatch. cfg.epochs counts passes over
/// the rows of `samples`. Throws InvalidArgument for sigma <= 0.
DsmResult dsm_fit(const Matrix& samples, double sigma, const nn::TrainConfig& cfg, RngStream& rng);

}  // namespace fmstat::score
