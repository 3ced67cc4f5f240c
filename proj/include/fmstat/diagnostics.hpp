#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fmstat/matrix.hpp"
#include "fmstat/rng.hpp"

namespace fmstat::diag {

/// x -> grad log q(x).
using ScoreFn = std::function<Vector(std::span<const double>)>;

/// k(x, y) = exp(-||x - y||^2 / (2 h^2)).
struct RbfKernel {
  double h = 1.0;
  void validate() const;
};

/// Stein kernel of the RBF kernel, given the scores s(x), s(y).
double stein_kernel_u(std::span<const double> x, std::span<const double> y, std::span<const double> sx,
                      std::span<const double> sy, const RbfKernel& k);
double stein_kernel_u(std::span<const double> x, std::span<const double> y, const ScoreFn& score, const RbfKernel& k);

/// u(x_i, x_j) over all sample rows (diagonal included).
Matrix stein_gram(const Matrix& samples, const ScoreFn& score, const RbfKernel& k);

/// (n (n - 1))^{-1} sum_{i != j} u(x_i, x_j). Throws TooFewSamples for n < 2.
double ksd_ustat(const Matrix& samples, const ScoreFn& score, const RbfKernel& k);

struct KsdResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double bandwidth = 0.0;
  std::size_t n = 0;
  std::size_t bootstrap = 0;

  /// {statistic, p_value, bandwidth, n, B}
  std::string to_json() const;
};

/// Rademacher wild bootstrap of the degenerate U-statistic with
/// p = (1 + #{T_b >= T}) / (B + 1). Throws TooFewSamples (n < 2) and
/// InvalidArgument for B < 100.
KsdResult ksd_wild_bootstrap(const Matrix& samples, const ScoreFn& score, const RbfKernel& k, std::size_t b,
                             RngStream& rng);

/// Median pairwise Euclidean distance between rows; all pairs up to n = 2000,
/// otherwise 2000 pairs drawn with a fixed seed. Floored at 1e-6.
double median_heuristic(const Matrix& samples);

/// Empirical quantile with linear interpolation between order statistics.
double quantile(std::span<const double> v, double alpha);
double quantile_sorted(std::span<const double> sorted, double alpha);

/// 1-D Wasserstein-1 distance between empirical laws. Throws EmptySample.
double w1_1d(std::span<const double> a, std::span<const double> b);

/// Q_alpha(s1) - Q_alpha(s0). Throws EmptySample and OutOfUnitInterval.
double qte(std::span<const double> s1, std::span<const double> s0, double alpha);

/// Paired quantiles at probabilities (i - 1/2) / grid.
std::vector<std::pair<double, double>> qq_points(std::span<const double> a, std::span<const double> b,
                                                 std::size_t grid);

/// Fraction of (lo, hi) intervals containing `truth`. Throws EmptyInput.
double coverage_check(std::span<const std::pair<double, double>> intervals, double truth);

/// sup_x |F_n(x) - F(x)| against a continuous CDF.
double ks_statistic(std::span<const double> sample, const std::function<double(double)>& cdf);
/// Two-sample sup distance between empirical CDFs.
double ks_two_sample(std::span<const double> a, std::span<const double> b);

}  // namespace fmstat::diag
