#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <random>

namespace fmstat {

/// Split-stream xoshiro256** generator. The state is derived from
/// (seed, stream) through SplitMix64, so equal pairs give identical sequences
/// and distinct stream ids give statistically independent streams without
/// coordination. An instance has a single owner; do not share across threads.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Independent child stream, e.g. one per fold or replicate.
  RngStream child(std::uint64_t id) const;

  /// Uniform on [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double exponential(double rate = 1.0);
  /// +1 or -1 with equal probability.
  double rademacher() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  std::size_t index(std::size_t n) noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::array<std::uint64_t, 4> s_{};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace fmstat
