// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference vs OpenMP kernels. Args are the matrix width d (and the
// sample count n for the Gram update).

#include <benchmark/benchmark.h>

#include <vector>

#include "tpatch/kernels.hpp"
#include "tpatch/linalg.hpp"

namespace {

using tpatch::Mat;
using tpatch::Vec;
namespace k = tpatch::kernels;

template <void (*Kernel)(const Mat&, const Mat&, Mat&)>
void BM_Matmul(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  tpatch::Rng rng(1);
  const Mat a = tpatch::random_normal_mat(rng, d, d);
  const Mat b = tpatch::random_normal_mat(rng, d, d);
  Mat out(d, d);
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(d * d * d));
}

template <void (*Kernel)(std::span<const Vec>, std::span<const Vec>, Mat&, Mat&)>
void BM_Gram(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const std::vector<Vec> deltas = tpatch::sample_spherical(d, n, 1.0, 2);
  const std::vector<Vec> attns = tpatch::sample_spherical(d, n, 1.0, 3);
  for (auto _ : state) {
    Mat z(d, d), b(d, d);
    Kernel(deltas, attns, z, b);
    benchmark::DoNotOptimize(z.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * d * d));
}

template <void (*Kernel)(const Mat&, const Mat&, Mat&)>
void BM_CholeskySolve(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const std::vector<Vec> ys = tpatch::sample_spherical(d, 4 * d, 1.0, 4);
  tpatch::GramAccumulator acc(d);
  acc.add_batch(ys, ys);
  const Mat lower = tpatch::cholesky(acc.z());
  tpatch::Rng rng(5);
  const Mat rhs = tpatch::random_normal_mat(rng, d, d);
  Mat out(d, d);
  for (auto _ : state) {
    Kernel(lower, rhs, out);
    benchmark::DoNotOptimize(out.data().data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<k::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Matmul<k::parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Gram<k::serial::gram_update>)
    ->Name("gram_update/serial")
    ->Args({16, 100000})
    ->Args({64, 10000});
BENCHMARK(BM_Gram<k::parallel::gram_update>)
    ->Name("gram_update/parallel")
    ->Args({16, 100000})
    ->Args({64, 10000});
BENCHMARK(BM_CholeskySolve<k::serial::cholesky_solve_rows>)->Name("cholesky_solve/serial")->Arg(256);
BENCHMARK(BM_CholeskySolve<k::parallel::cholesky_solve_rows>)->Name("cholesky_solve/parallel")->Arg(256);

BENCHMARK_MAIN();
