#include "fmstat/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "fmstat/kernels.hpp"

namespace fmstat::diag {

void RbfKernel::validate() const {
  require(std::isfinite(h) && h > 0.0, ErrorCode::InvalidArgument, "RBF bandwidth must be positive and finite");
}

double stein_kernel_u(std::span<const double> x, std::span<const double> y, std::span<const double> sx,
                      std::span<const double> sy, const RbfKernel& k) {
  const std::size_t d = x.size();
  require(y.size() == d && sx.size() == d && sy.size() == d, ErrorCode::DimensionMismatch, "Stein kernel dimensions");
  const double h2 = k.h * k.h;
  double r2 = 0.0, ss = 0.0, sx_r = 0.0, sy_r = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double r = x[i] - y[i];
    r2 += r * r;
    ss += sx[i] * sy[i];
    sx_r += sx[i] * r;
    sy_r += sy[i] * r;
  }
  const double kv = std::exp(-r2 / (2.0 * h2));
  // s(x).grad_y k = s(x).r/h^2 k ; s(y).grad_x k = -s(y).r/h^2 k
  return kv * (ss + (sx_r - sy_r) / h2 + static_cast<double>(d) / h2 - r2 / (h2 * h2));
}

double stein_kernel_u(std::span<const double> x, std::span<const double> y, const ScoreFn& score, const RbfKernel& k) {
  return stein_kernel_u(x, y, score(x), score(y), k);
}

Matrix stein_gram(const Matrix& samples, const ScoreFn& score, const RbfKernel& k) {
  k.validate();
  const std::size_t n = samples.rows(), d = samples.cols();
  Matrix s(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector si = score(samples.row(i));
    require(si.size() == d, ErrorCode::DimensionMismatch, "score output dimension");
    std::copy(si.begin(), si.end(), s.row(i).begin());
  }
  return kernels::parallel::symmetric_gram(
      n, [&](std::size_t i, std::size_t j) { return stein_kernel_u(samples.row(i), samples.row(j), s.row(i), s.row(j), k); });
}

namespace {

double offdiag_mean(const Matrix& u) {
  const std::size_t n = u.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) total += u(i, j);
  return total / (static_cast<double>(n) * static_cast<double>(n - 1));
}

}  // namespace

double ksd_ustat(const Matrix& samples, const ScoreFn& score, const RbfKernel& k) {
  require(samples.rows() >= 2, ErrorCode::TooFewSamples, "KSD needs at least two samples");
  return offdiag_mean(stein_gram(samples, score, k));
}

std::string KsdResult::to_json() const {
  nlohmann::ordered_json j;
  j["statistic"] = statistic;
  j["p_value"] = p_value;
  j["bandwidth"] = bandwidth;
  j["n"] = n;
  j["B"] = bootstrap;
  return j.dump(2);
}

KsdResult ksd_wild_bootstrap(const Matrix& samples, const ScoreFn& score, const RbfKernel& k, std::size_t b,
                             RngStream& rng) {
  require(samples.rows() >= 2, ErrorCode::TooFewSamples, "KSD needs at least two samples");
  require(b >= 100, ErrorCode::InvalidArgument, "wild bootstrap needs B >= 100");
  const std::size_t n = samples.rows();
  const Matrix u = stein_gram(samples, score, k);
  const double norm = static_cast<double>(n) * static_cast<double>(n - 1);
  KsdResult res;
  res.statistic = offdiag_mean(u);
  res.bandwidth = k.h;
  res.n = n;
  res.bootstrap = b;
  Vector w(n);
  std::size_t exceed = 0;
  for (std::size_t r = 0; r < b; ++r) {
    for (auto& x : w) x = rng.rademacher();
    const double tb = kernels::parallel::offdiag_quadratic(u, w) / norm;
    if (tb >= res.statistic) ++exceed;
  }
  res.p_value = static_cast<double>(1 + exceed) / static_cast<double>(b + 1);
  return res;
}

double median_heuristic(const Matrix& samples) {
  const std::size_t n = samples.rows();
  require(n >= 2, ErrorCode::TooFewSamples, "median heuristic needs at least two samples");
  Vector dist;
  if (n <= 2000) {
    dist.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) dist.push_back(std::sqrt(squared_distance(samples.row(i), samples.row(j))));
  } else {
    RngStream rng(0x6d656469616eULL);
    dist.reserve(2000);
    while (dist.size() < 2000) {
      const std::size_t i = rng.index(n), j = rng.index(n);
      if (i != j) dist.push_back(std::sqrt(squared_distance(samples.row(i), samples.row(j))));
    }
  }
  const std::size_t m = dist.size();
  std::nth_element(dist.begin(), dist.begin() + m / 2, dist.end());
  double med = dist[m / 2];
  if (m % 2 == 0) med = 0.5 * (med + *std::max_element(dist.begin(), dist.begin() + m / 2));
  return std::max(med, 1e-6);
}

double quantile_sorted(std::span<const double> sorted, double alpha) {
  require(!sorted.empty(), ErrorCode::EmptySample, "quantile of an empty sample");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::OutOfUnitInterval, "quantile level must lie in [0, 1]");
  const double pos = alpha * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double quantile(std::span<const double> v, double alpha) {
  Vector s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, alpha);
}

double w1_1d(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorCode::EmptySample, "W1 needs two nonempty samples");
  Vector sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const std::size_t na = sa.size(), nb = sb.size();
  if (na == nb) {
    double s = 0.0;
    for (std::size_t i = 0; i < na; ++i) s += std::abs(sa[i] - sb[i]);
    return s / static_cast<double>(na);
  }
  // Integrate |F_a^{-1}(p) - F_b^{-1}(p)| over the merged breakpoints i/na, j/nb.
  double total = 0.0, p = 0.0;
  std::size_t i = 0, j = 0;
  while (i < na && j < nb) {
    const double next_a = static_cast<double>(i + 1) / static_cast<double>(na);
    const double next_b = static_cast<double>(j + 1) / static_cast<double>(nb);
    const double next = std::min(next_a, next_b);
    total += (next - p) * std::abs(sa[i] - sb[j]);
    p = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return total;
}

double qte(std::span<const double> s1, std::span<const double> s0, double alpha) {
  require(!s1.empty() && !s0.empty(), ErrorCode::EmptySample, "QTE needs two nonempty samples");
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::OutOfUnitInterval, "QTE level must lie in (0, 1)");
  return quantile(s1, alpha) - quantile(s0, alpha);
}

std::vector<std::pair<double, double>> qq_points(std::span<const double> a, std::span<const double> b,
                                                 std::size_t grid) {
  require(!a.empty() && !b.empty(), ErrorCode::EmptySample, "QQ needs two nonempty samples");
  require(grid >= 1, ErrorCode::InvalidArgument, "QQ grid must be positive");
  Vector sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::vector<std::pair<double, double>> out(grid);
  for (std::size_t i = 0; i < grid; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(grid);
    out[i] = {quantile_sorted(sa, p), quantile_sorted(sb, p)};
  }
  return out;
}

double coverage_check(std::span<const std::pair<double, double>> intervals, double truth) {
  require(!intervals.empty(), ErrorCode::EmptyInput, "no intervals to check");
  std::size_t hit = 0;
  for (const auto& [lo, hi] : intervals)
    if (lo <= truth && truth <= hi) ++hit;
  return static_cast<double>(hit) / static_cast<double>(intervals.size());
}

double ks_statistic(std::span<const double> sample, const std::function<double(double)>& cdf) {
  require(!sample.empty(), ErrorCode::EmptySample, "KS statistic of an empty sample");
  Vector s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = cdf(s[i]);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
  }
  return d;
}

double ks_two_sample(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorCode::EmptySample, "KS needs two nonempty samples");
  Vector sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double x = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] <= x) ++i;
    while (j < sb.size() && sb[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

}  // namespace fmstat::diag
