// Parallel kernels against their serial references. Run with
// OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "ps2/common/rng.hpp"
#include "ps2/kernels/kernels.hpp"
#include "ps2/room/rir.hpp"
#include "ps2/room/scene.hpp"

namespace {

using ps2::kernels::Trans;

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  ps2::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      ps2::kernels::gemm<float>(Trans::kNo, Trans::kYes, n, n, n, 1.0f, a.data(), b.data(), 0.0f, c.data());
    else
      ps2::kernels::reference::gemm<float>(Trans::kNo, Trans::kYes, n, n, n, 1.0f, a.data(), b.data(), 0.0f,
                                           c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);

// 3x3 convolution over a [cin, T, F] grid, as in the encoders.
constexpr std::size_t kCin = 12, kCout = 48, kRows = 63, kCols = 257;

void BM_ConvSerial(benchmark::State& state) {
  const auto x = random_vec(kCin * kRows * kCols, 3), w = random_vec(kCout * kCin * 9, 4), bias = random_vec(kCout, 5);
  std::vector<float> y(kCout * kRows * kCols);
  for (auto _ : state) {
    ps2::kernels::reference::conv3x3<float>(x.data(), w.data(), bias.data(), kCin, kCout, kRows, kCols, y.data());
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_ConvSerial)->Name("conv3x3/serial");

void BM_ConvParallel(benchmark::State& state) {
  const auto x = random_vec(kCin * kRows * kCols, 3), w = random_vec(kCout * kCin * 9, 4);
  std::vector<float> col(kCin * 9 * kRows * kCols), y(kCout * kRows * kCols);
  for (auto _ : state) {
    ps2::kernels::im2col3x3<float>(x.data(), kCin, kRows, kCols, col.data());
    ps2::kernels::gemm<float>(Trans::kNo, Trans::kNo, kCout, kRows * kCols, kCin * 9, 1.0f, w.data(), col.data(),
                              0.0f, y.data());
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_ConvParallel)->Name("conv3x3/im2col_parallel");

// Mamba scan over the frames of every frequency bin.
template <bool Parallel>
void BM_Scan(benchmark::State& state) {
  const ps2::kernels::ScanDims d{257, 63, 96, 16};
  const std::size_t seq = d.batch * d.length;
  const auto u = random_vec(seq * d.channels, 6), b = random_vec(seq * d.state, 7), c = random_vec(seq * d.state, 8);
  auto delta = random_vec(seq * d.channels, 9);
  for (auto& x : delta) x = 0.01f + 0.05f * std::abs(x);
  auto a = random_vec(d.channels * d.state, 10);
  for (auto& x : a) x = -std::abs(x) - 0.1f;
  const auto dd = random_vec(d.channels, 11);
  std::vector<float> y(seq * d.channels);
  for (auto _ : state) {
    if constexpr (Parallel)
      ps2::kernels::selective_scan_forward<float>(d, u.data(), delta.data(), a.data(), b.data(), c.data(), dd.data(),
                                                  y.data());
    else
      ps2::kernels::reference::selective_scan_forward<float>(d, u.data(), delta.data(), a.data(), b.data(), c.data(),
                                                             dd.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Scan<false>)->Name("scan_forward/serial");
BENCHMARK(BM_Scan<true>)->Name("scan_forward/parallel");

// Six-mic image-source response, 0.4 s RT60.
template <bool Parallel>
void BM_Rir(benchmark::State& state) {
  const auto scene = ps2::room::sample_scene(1, ps2::room::ProtocolRanges{});
  const auto& src = scene.trajectories[0].start;
  for (auto _ : state) {
    auto h = Parallel ? ps2::room::compute_rir(scene.room, 0.4, src, scene.mics, scene.sample_rate)
                      : ps2::room::reference::compute_rir(scene.room, 0.4, src, scene.mics, scene.sample_rate);
    benchmark::DoNotOptimize(h.data());
  }
}
BENCHMARK(BM_Rir<false>)->Name("rir/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Rir<true>)->Name("rir/parallel")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
