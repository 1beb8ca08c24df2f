// Serial reference kernels against their OpenMP counterparts. Set
// OMP_NUM_THREADS to compare thread counts.

#include <benchmark/benchmark.h>

#include "deepmix/eval.hpp"
#include "deepmix/kernels.hpp"

using namespace deepmix;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Prng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform();
  return m;
}

template <Matrix (*Kernel)(const Matrix&, const Matrix&)>
void bm_matmul_nt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 784, 1), b = random_matrix(200, 784, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 200 * 784));
}

template <Matrix (*Kernel)(const Matrix&, const Matrix&)>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 200, 1), b = random_matrix(200, 784, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 200 * 784));
}

template <Matrix (*Kernel)(const Matrix&, const Matrix&)>
void bm_sq_distances(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 784, 3), b = random_matrix(1000, 784, 4);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 1000));
}

void bm_parzen(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ParzenEstimator est{random_matrix(2000, 784, 5), 0.2};
  const Matrix test = random_matrix(n, 784, 6);
  for (auto _ : state) benchmark::DoNotOptimize(parzen_point_log_likelihoods(est, test));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 2000));
}

}  // namespace

BENCHMARK(bm_matmul_nt<serial::matmul_nt>)->Name("matmul_nt/serial")->Arg(64)->Arg(512);
BENCHMARK(bm_matmul_nt<kernels::matmul_nt>)->Name("matmul_nt/openmp")->Arg(64)->Arg(512);
BENCHMARK(bm_matmul<serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(512);
BENCHMARK(bm_matmul<kernels::matmul>)->Name("matmul/openmp")->Arg(64)->Arg(512);
BENCHMARK(bm_sq_distances<serial::sq_distances>)->Name("sq_distances/serial")->Arg(100)->Arg(1000);
BENCHMARK(bm_sq_distances<kernels::sq_distances>)->Name("sq_distances/openmp")->Arg(100)->Arg(1000);
BENCHMARK(bm_parzen)->Name("parzen/openmp")->Arg(100)->Arg(1000);

BENCHMARK_MAIN();
