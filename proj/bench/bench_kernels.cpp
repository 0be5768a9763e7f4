// OpenMP kernels against their serial references.
//
//   ./sar_bench --benchmark_filter=gemm
//   OMP_NUM_THREADS=4 ./sar_bench

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "sar/ccl.hpp"
#include "sar/entropy.hpp"
#include "sar/kernels.hpp"

namespace {

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<sar::Grid2D> random_maps(int count, int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<sar::Grid2D> maps;
  for (int i = 0; i < count; ++i) {
    std::vector<double> v(static_cast<std::size_t>(side) * side);
    for (auto& x : v) x = d(rng);
    maps.emplace_back(side, std::move(v), sar::MapKind::PreSoftmax);
  }
  return maps;
}

// Shapes: tokens x d by d x 3d (qkv projection of the default model) and larger.
template <bool Parallel>
void gemm_nn(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int k = static_cast<int>(state.range(1));
  const int n = static_cast<int>(state.range(2));
  const auto a = random_vector(static_cast<std::size_t>(m) * k, 1);
  const auto b = random_vector(static_cast<std::size_t>(k) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(m) * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      sar::kernels::gemm_nn<float>(a, b, c, m, k, n);
    } else {
      sar::kernels::reference::gemm_nn<float>(a, b, c, m, k, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * k * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

template <bool Parallel>
void gemm_tn(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int k = static_cast<int>(state.range(1));
  const int n = static_cast<int>(state.range(2));
  const auto a = random_vector(static_cast<std::size_t>(m) * k, 1);
  const auto b = random_vector(static_cast<std::size_t>(m) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(k) * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      sar::kernels::gemm_tn<float>(a, b, c, m, k, n, false);
    } else {
      sar::kernels::reference::gemm_tn<float>(a, b, c, m, k, n, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * k * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

template <bool Parallel>
void entropy_batch(benchmark::State& state) {
  const auto maps = random_maps(static_cast<int>(state.range(0)), 14, 3);
  for (auto _ : state) {
    auto r = Parallel ? sar::spatial_entropy_batch(maps) : sar::reference::spatial_entropy_batch(maps);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void ccl_224(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution on(static_cast<double>(state.range(0)) / 100.0);
  std::vector<double> v(224 * 224);
  for (auto& x : v) x = on(rng) ? 1.0 : 0.0;
  const sar::Grid2D g(224, std::move(v));
  for (auto _ : state) {
    auto l = sar::connected_components(g);
    benchmark::DoNotOptimize(l.count);
  }
}

}  // namespace

BENCHMARK(gemm_nn<false>)->Name("gemm_nn/serial")->Args({197, 64, 192})->Args({512, 256, 256});
BENCHMARK(gemm_nn<true>)->Name("gemm_nn/openmp")->Args({197, 64, 192})->Args({512, 256, 256});
BENCHMARK(gemm_tn<false>)->Name("gemm_tn/serial")->Args({197, 64, 256})->Args({512, 256, 256});
BENCHMARK(gemm_tn<true>)->Name("gemm_tn/openmp")->Args({197, 64, 256})->Args({512, 256, 256});
BENCHMARK(entropy_batch<false>)->Name("entropy_batch/serial")->Arg(256);
BENCHMARK(entropy_batch<true>)->Name("entropy_batch/openmp")->Arg(256);
BENCHMARK(ccl_224)->Arg(10)->Arg(50)->Arg(90)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
