#pragma once

#include <optional>
#include <span>
#include <string>

#include "fmstat/flow.hpp"
#include "fmstat/matrix.hpp"
#include "fmstat/rng.hpp"

namespace fmstat::copula {

/// Standard normal CDF and its inverse. normal_quantile throws
/// OutOfUnitInterval outside (0, 1).
double normal_cdf(double x);
double normal_quantile(double p);

enum class Transform { Logit, Probit };
std::string to_string(Transform t);
Transform transform_from_string(const std::string& s);

/// Forward maps (0,1) -> R and their inverses. Forward maps throw
/// OutOfUnitInterval for u outside (0, 1).
double logit(double u);
double inv_logit(double z);
double probit(double u);
double inv_probit(double z);
double forward(Transform t, double u);
double inverse(Transform t, double z);
/// log |d forward / du|.
double log_forward_jacobian(Transform t, double u);

/// Elementwise over a matrix.
Matrix to_latent(const Matrix& u, Transform t);
Matrix from_latent(const Matrix& z, Transform t);

struct PseudoObs {
  Matrix u;
  double eps = 0.0;
};

/// Per-column average ranks R mapped to (R - 1/2) / n and clipped to
/// [eps, 1 - eps]; eps defaults to 1 / (2n). Throws TooFewRows for n < 2.
PseudoObs ranks_to_pseudo(const Matrix& x, std::optional<double> eps = std::nullopt);

struct CopulaConfig {
  flow::CfmConfig cfm;
  flow::OdeConfig ode{80, flow::Scheme::Rk4, flow::Direction::Forward};
  std::optional<double> eps;  // clip level, default 1 / (2n)

  CopulaConfig();
};

struct CopulaModel {
  flow::FlowModel flow;
  Transform transform = Transform::Logit;
  double eps = 0.0;
  flow::OdeConfig ode;
};

/// Flow matching on latent pseudo-observations. Throws TooFewRows (n < 100).
CopulaModel flow_copula_train(const Matrix& x, Transform t, const CopulaConfig& cfg, RngStream& rng);

/// Base draw -> ODE -> inverse transform, clipped to [eps, 1 - eps].
Matrix copula_sample(const CopulaModel& m, std::size_t n, RngStream& rng);

/// Copula log-density of u under a latent flow with known field and
/// divergence: the latent point is pulled back by the reverse ODE, transported
/// forward with the log-density correction, and the transform's Jacobian is
/// added.
double copula_log_density(const flow::VelocityFn& v, const flow::DivergenceFn& div, std::span<const double> u,
                          Transform t, const flow::OdeConfig& ode);

/// Concordant minus discordant pairs over all pairs (ties count 0), divided
/// by the number of pairs. Throws TooFewRows and DimensionMismatch (not two
/// columns).
double kendall_tau(const Matrix& u);

/// Pearson correlation of the two columns over rows with lo <= u(i, 0) < hi.
double local_correlation(const Matrix& u, double lo, double hi);

}  // namespace fmstat::copula
