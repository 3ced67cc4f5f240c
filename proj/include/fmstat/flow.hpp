#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmstat/matrix.hpp"
#include "fmstat/mlp.hpp"
#include "fmstat/rng.hpp"

namespace fmstat::flow {

/// Time-dependent vector field (t, x) -> v(t, x).
using VelocityFn = std::function<Vector(double, std::span<const double>)>;
/// (t, x) -> div_x v(t, x).
using DivergenceFn = std::function<double(double, std::span<const double>)>;

// ---- Paths ----

struct PathSample {
  double t = 0.0;
  Vector xt;
  Vector u;  // regression target x1 - x0
  Vector x0, x1;
};

/// x_t = (1 - t) x0 + t x1, u = x1 - x0. Throws DimensionMismatch, and
/// OutOfUnitInterval for t outside [0, 1].
PathSample linear_path(std::span<const double> x0, std::span<const double> x1, double t);

// ---- Couplings ----

enum class CouplingKind { Independent, Assignment, Entropic };

std::string to_string(CouplingKind k);
CouplingKind coupling_from_string(const std::string& s);

struct CouplingPlan {
  CouplingKind kind = CouplingKind::Independent;
  /// Row i of the cost matrix is matched to column permutation[i].
  std::optional<std::vector<std::size_t>> permutation;
  /// Doubly stochastic plan with marginals 1/m.
  std::optional<Matrix> plan;

  /// Sum_i C(i, perm[i]) for a permutation, <P, C> for a plan.
  double cost(const Matrix& c) const;
};

/// Exact minimum-cost perfect matching (shortest augmenting paths with
/// potentials, O(m^3)). Throws NotSquare, InvalidArgument for m > 256.
CouplingPlan ot_assignment(const Matrix& c);

/// Entropic OT with uniform marginals, iterated in log space. The final plan
/// is rounded onto the exact marginals. Throws NoConvergence when the
/// marginal violation is still above 1e-6 after `iters` sweeps.
CouplingPlan sinkhorn(const Matrix& c, double eps, std::size_t iters = 5000);

/// Squared-distance cost C(i, j) = ||x1_i - x0_j||^2.
Matrix pairing_cost(const Matrix& x1, const Matrix& x0);

/// Reorders the rows of x0 so that row i is paired with row i of x1.
/// Entropic pairing draws each partner from the corresponding plan row.
Matrix pair_minibatch(const Matrix& x1, const Matrix& x0, CouplingKind kind, RngStream& rng,
                      double sinkhorn_eps = 0.05);

// ---- Flow model ----

/// Velocity network on features [t, sin 2 pi t, cos 2 pi t, x, c].
class FlowModel {
 public:
  static constexpr std::size_t kTimeFeatures = 3;

  FlowModel() = default;
  FlowModel(nn::Mlp net, std::size_t state_dim, std::size_t cond_dim);

  const nn::Mlp& net() const noexcept { return net_; }
  nn::Mlp& net() noexcept { return net_; }
  std::size_t state_dim() const noexcept { return state_dim_; }
  std::size_t cond_dim() const noexcept { return cond_dim_; }

  Vector velocity(double t, std::span<const double> x, std::span<const double> c = {}) const;
  /// One state per row of x; c is empty or has one condition per row.
  Matrix velocity_batch(double t, const Matrix& x, const Matrix& c) const;

  /// Field with the condition frozen. Refers to this model, which must
  /// outlive it.
  VelocityFn field(Vector c = {}) const;

 private:
  nn::Mlp net_;
  std::size_t state_dim_ = 0, cond_dim_ = 0;
};

/// Writes the network input rows for (t_i, x_i, c_i).
Matrix flow_features(std::span<const double> t, const Matrix& x, const Matrix& c);

struct CfmConfig {
  nn::TrainConfig train;
  CouplingKind coupling = CouplingKind::Independent;
  double sinkhorn_eps = 0.05;
  double t_max = 1.0 - 1e-3;  // t ~ U[0, t_max]
  double path_noise = 0.0;    // adds path_noise * sqrt(t (1 - t)) * xi to x_t
};

struct CfmResult {
  FlowModel model;
  double initial_loss = 0.0;  // untrained network on the first minibatch
  std::vector<double> epoch_loss;
};

/// Flow matching from a standard normal base to the rows of `data`.
/// Throws EmptyInput and Divergence.
CfmResult cfm_train(const Matrix& data, const CfmConfig& cfg, RngStream& rng);

/// Same, with a condition row per data row fed to the network. Pairing is
/// always independent so conditions stay attached to their targets.
CfmResult conditional_cfm_train(const Matrix& cond, const Matrix& y, const CfmConfig& cfg, RngStream& rng);

// ---- ODE / SDE ----

enum class Scheme { Euler, Rk4 };
enum class Direction { Forward, Reverse };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

struct OdeConfig {
  std::size_t steps = 100;  // grid t_k = k / steps on [0, 1]
  Scheme scheme = Scheme::Rk4;
  Direction direction = Direction::Forward;

  void validate() const;
};

/// Fixed-grid integration over [0, 1]; Reverse runs from t = 1 back to 0 on
/// the same grid. Throws NonFinite if the state blows up.
Vector ode_integrate(const VelocityFn& v, std::span<const double> x0, const OdeConfig& cfg);

/// States at every grid point (steps + 1 rows), with the matching times.
struct Trajectory {
  std::vector<double> t;
  Matrix x;
};
Trajectory ode_trajectory(const VelocityFn& v, std::span<const double> x0, const OdeConfig& cfg);

/// Integrates every row of x0 through a flow model at once.
Matrix flow_sample(const FlowModel& model, const Matrix& x0, const Matrix& cond, const OdeConfig& cfg);
/// Base draws from N(0, I) pushed through the model.
Matrix flow_generate(const FlowModel& model, std::size_t n, const Matrix& cond, const OdeConfig& cfg,
                     RngStream& rng);

/// Divergence of x -> A x.
DivergenceFn linear_divergence(const Matrix& a);
/// Hutchinson estimate with finite-difference JVPs, `probes` per call.
DivergenceFn hutchinson_divergence_fn(VelocityFn v, std::size_t probes, RngStream& rng);

struct TransportedDensity {
  Vector x1;
  double log_density = 0.0;
};

/// log rho_1(x_1) = log rho_0(x_0) - int_0^1 div v(t, x_t) dt, with the
/// divergence integrated on the same grid and scheme as the state.
TransportedDensity logdensity_along_flow(const VelocityFn& v, const DivergenceFn& div, std::span<const double> x0,
                                         double log_rho0, const OdeConfig& cfg);

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

/// Law of e^{tA} X for X ~ N(mu0, Sigma0). Throws NotPositiveDefinite.
GaussianMoments gaussian_pushforward(const Matrix& a, std::span<const double> mu0, const Matrix& sigma0, double t);

/// RK4 on mu' = A mu, Sigma' = A Sigma + Sigma A^T + D over [0, t] in `steps`
/// steps.
GaussianMoments ou_moments(const Matrix& a, const Matrix& d, std::span<const double> mu0, const Matrix& sigma0, double t,
                           std::size_t steps);

/// One path of dX = f(t, X) dt + g(t) dW on [0, 1]. Throws NonFinite.
Vector euler_maruyama(const VelocityFn& f, const std::function<double(double)>& g, std::span<const double> x0,
                      std::size_t steps, RngStream& rng);

/// v(t, x) = f(t, x) - g^2 / 2 * s(t, x).
VelocityFn probability_flow_velocity(VelocityFn f, double g, VelocityFn score);

/// Largest ||Phi(x0 + delta u) - Phi(x0)|| / delta over `probes` random unit
/// directions u, where Phi is the time-one map.
double sensitivity_ratio(const VelocityFn& v, std::span<const double> x0, double delta, const OdeConfig& cfg,
                         std::size_t probes, RngStream& rng);

}  // namespace fmstat::flow
