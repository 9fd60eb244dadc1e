// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels.

#include <benchmark/benchmark.h>

#include <vector>

#include "lrdm/kernels.hpp"
#include "lrdm/rng.hpp"

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  lrdm::Rng rng(seed);
  std::vector<double> v(n);
  rng.fill_normal(v);
  return v;
}

template <auto Kernel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 128, m = 128;
  const auto a = random_values(n * k, 1);
  const auto b = random_values(k * m, 2);
  std::vector<double> c(n * m);
  for (auto _ : state) {
    Kernel(a.data(), b.data(), c.data(), n, k, m);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n * k * m));
}

template <auto Kernel>
void BM_matmul_acc_at(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 128, m = 128;
  const auto a = random_values(n * k, 3);
  const auto b = random_values(n * m, 4);
  std::vector<double> c(k * m);
  for (auto _ : state) {
    Kernel(a.data(), b.data(), c.data(), n, k, m);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n * k * m));
}

template <auto Kernel>
void BM_pairwise(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * 2, 5);
  const auto b = random_values(n * 2, 6);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(a.data(), n, b.data(), n, 2));
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n * n));
}

}  // namespace

BENCHMARK(BM_matmul<lrdm::kernels::serial::matmul>)->Name("matmul/serial")->Arg(128)->Arg(1024);
BENCHMARK(BM_matmul<lrdm::kernels::parallel::matmul>)->Name("matmul/parallel")->Arg(128)->Arg(1024);
BENCHMARK(BM_matmul_acc_at<lrdm::kernels::serial::matmul_acc_at>)->Name("matmul_acc_at/serial")->Arg(128)->Arg(1024);
BENCHMARK(BM_matmul_acc_at<lrdm::kernels::parallel::matmul_acc_at>)->Name("matmul_acc_at/parallel")->Arg(128)->Arg(1024);
BENCHMARK(BM_pairwise<lrdm::kernels::serial::pairwise_distance_sum>)->Name("pairwise/serial")->Arg(1000)->Arg(4000);
BENCHMARK(BM_pairwise<lrdm::kernels::parallel::pairwise_distance_sum>)->Name("pairwise/parallel")->Arg(1000)->Arg(4000);

BENCHMARK_MAIN();
