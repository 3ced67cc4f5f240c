#include "fmstat/rng.hpp"

#include <cmath>

namespace fmstat {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  std::uint64_t mix = stream;
  std::uint64_t x = seed ^ splitmix64(mix);
  for (auto& word : s_) word = splitmix64(x);
}

RngStream::result_type RngStream::operator()() noexcept {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

RngStream RngStream::child(std::uint64_t id) const {
  std::uint64_t mix = stream_ ^ 0xd1b54a32d192ed03ULL;
  std::uint64_t h = splitmix64(mix) ^ id;
  return RngStream(seed_, splitmix64(h));
}

double RngStream::uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double RngStream::normal() { return normal_(*this); }

double RngStream::exponential(double rate) {
  // 1 - U lies in (0, 1], so the log is finite.
  return -std::log(1.0 - uniform()) / rate;
}

double RngStream::rademacher() noexcept { return ((*this)() >> 63) ? 1.0 : -1.0; }

std::size_t RngStream::index(std::size_t n) noexcept {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % (n ? n : 1);
}

}  // namespace fmstat
