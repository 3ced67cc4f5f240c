// Serial reference against OpenMP kernels. Each benchmark first checks that
// both versions agree, so a speedup never comes from a wrong answer.

#include <benchmark/benchmark.h>

#include <cmath>
#include <cstdlib>

#include "fmstat/diagnostics.hpp"
#include "fmstat/kernels.hpp"
#include "fmstat/rng.hpp"

namespace {

using fmstat::Matrix;
namespace k = fmstat::kernels;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  fmstat::RngStream rng(seed, 0);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void check_close(const Matrix& a, const Matrix& b, benchmark::State& state) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  if (worst > 1e-9) state.SkipWithError("serial and parallel kernels disagree");
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  check_close(k::serial::gemm(a, b), k::parallel::gemm(a, b), state);
  for (auto _ : state) benchmark::DoNotOptimize(Parallel ? k::parallel::gemm(a, b) : k::serial::gemm(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_PairwiseSqDist(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(n, 8, 3);
  check_close(k::serial::pairwise_sq_dist(x, x), k::parallel::pairwise_sq_dist(x, x), state);
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? k::parallel::pairwise_sq_dist(x, x) : k::serial::pairwise_sq_dist(x, x));
}

template <bool Parallel>
void BM_CenteredCovariance(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(2 * d, d, 4);
  check_close(k::serial::centered_covariance(x), k::parallel::centered_covariance(x), state);
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? k::parallel::centered_covariance(x) : k::serial::centered_covariance(x));
}

template <bool Parallel>
void BM_OffdiagQuadratic(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix u = k::serial::pairwise_sq_dist(random_matrix(n, 2, 5), random_matrix(n, 2, 5));
  fmstat::RngStream rng(6, 0);
  std::vector<double> w(n);
  for (auto& v : w) v = rng.rademacher();
  const double s = k::serial::offdiag_quadratic(u, w), p = k::parallel::offdiag_quadratic(u, w);
  if (std::abs(s - p) > 1e-8 * (1.0 + std::abs(s))) state.SkipWithError("serial and parallel kernels disagree");
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? k::parallel::offdiag_quadratic(u, w) : k::serial::offdiag_quadratic(u, w));
}

// Stein Gram matrix for a standard normal target, the inner loop of the KSD test.
template <bool Parallel>
void BM_SteinGram(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(n, 2, 7);
  const fmstat::diag::RbfKernel kern{1.0};
  const auto f = [&](std::size_t i, std::size_t j) {
    const std::vector<double> si{-x(i, 0), -x(i, 1)}, sj{-x(j, 0), -x(j, 1)};
    return fmstat::diag::stein_kernel_u(x.row(i), x.row(j), si, sj, kern);
  };
  check_close(k::serial::symmetric_gram(n, f), k::parallel::symmetric_gram(n, f), state);
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? k::parallel::symmetric_gram(n, f) : k::serial::symmetric_gram(n, f));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_PairwiseSqDist<false>)->Name("pairwise_sq_dist/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_PairwiseSqDist<true>)->Name("pairwise_sq_dist/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_CenteredCovariance<false>)->Name("centered_covariance/serial")->Arg(50)->Arg(200);
BENCHMARK(BM_CenteredCovariance<true>)->Name("centered_covariance/parallel")->Arg(50)->Arg(200);
BENCHMARK(BM_OffdiagQuadratic<false>)->Name("offdiag_quadratic/serial")->Arg(500)->Arg(2000);
BENCHMARK(BM_OffdiagQuadratic<true>)->Name("offdiag_quadratic/parallel")->Arg(500)->Arg(2000);
BENCHMARK(BM_SteinGram<false>)->Name("stein_gram/serial")->Arg(200)->Arg(800);
BENCHMARK(BM_SteinGram<true>)->Name("stein_gram/parallel")->Arg(200)->Arg(800);

int main(int argc, char** argv) {
  if (const char* t = std::getenv("FMSTAT_THREADS")) k::set_threads(std::atoi(t));
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
