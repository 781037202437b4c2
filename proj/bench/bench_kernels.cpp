// Serial reference kernels against their OpenMP counterparts.

#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "pep/kernels.hpp"
#include "pep/rng.hpp"

namespace {

using namespace pep::kernels;

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  pep::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Token projection shape: N points x m attributes rows, d x d weights.
template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 32, n = 32;
  const auto a = random_values(rows * k, 1);
  const auto b = random_values(k * n, 2);
  std::vector<double> c(rows * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      omp::matmul(a.data(), b.data(), c.data(), rows, k, n, false, {});
    } else {
      serial::matmul(a.data(), b.data(), c.data(), rows, k, n, false, {});
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows));
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 7;
  const auto in = random_values(rows * cols, 3, -5.0, 5.0);
  std::vector<double> out(in.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      omp::row_softmax(in.data(), out.data(), rows, cols);
    } else {
      serial::row_softmax(in.data(), out.data(), rows, cols);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows));
}

template <bool Parallel>
void BM_Project(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto xyz = random_values(n * 3, 4, -40.0, 40.0);
  const double chain[12] = {600, -700, 10, 5, 200, 5, -700, -80, 1, 0.01, 0.02, -0.3};
  std::vector<Projected> out(n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      omp::project(chain, xyz.data(), 3, n, 1242, 375, out.data());
    } else {
      serial::project(chain, xyz.data(), 3, n, 1242, 375, out.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

template <bool Parallel>
void BM_Knn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 8;
  const auto xyz = random_values(n * 3, 5, -30.0, 30.0);
  std::vector<std::uint32_t> out(n * k);
  for (auto _ : state) {
    if constexpr (Parallel) {
      omp::knn(xyz.data(), 3, n, k, out.data());
    } else {
      serial::knn(xyz.data(), 3, n, k, out.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(4096)->Arg(65536);
BENCHMARK(BM_Matmul<true>)->Name("matmul/omp")->Arg(4096)->Arg(65536);
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(4096)->Arg(65536);
BENCHMARK(BM_Softmax<true>)->Name("softmax/omp")->Arg(4096)->Arg(65536);
BENCHMARK(BM_Project<false>)->Name("project/serial")->Arg(16384)->Arg(131072);
BENCHMARK(BM_Project<true>)->Name("project/omp")->Arg(16384)->Arg(131072);
BENCHMARK(BM_Knn<false>)->Name("knn/serial")->Arg(512)->Arg(4096);
BENCHMARK(BM_Knn<true>)->Name("knn/omp")->Arg(512)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
