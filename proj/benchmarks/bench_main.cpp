#include <benchmark/benchmark.h>

#include "clsr/model.hpp"
#include "clsr/ops.hpp"

namespace clsr {
namespace {

Image noise(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img = Image::chw(c, h, w);
  for (auto& v : img.storage()) v = u(rng);
  return img;
}

void BM_Conv2d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int side = static_cast<int>(state.range(1));
  const auto x = Var<float>::constant(noise(c, side, side, 0));
  const auto w = Var<float>::constant(noise(c, c, 3 * 3, 1).reshaped({c, c, 3, 3}));
  const auto b = Var<float>::constant(Tensor<float>(Shape{c}));
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1, 1).value());
  state.counters["GFLOP/s"] =
      benchmark::Counter(static_cast<double>(conv_flops(3, c, c, side, side)) * 1e-9,
                         benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2d)->Args({16, 48})->Args({32, 48})->Args({32, 96});

ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.backbone.channels = 16;
  cfg.backbone.blocks_per_stage = {1, 1, 1};
  cfg.gcm.n_max = 64;
  return cfg;
}

void BM_PrepareContext(benchmark::State& state) {
  ClsrModel<float> m(bench_config(), 0);
  m.set_training(false);
  const Image ctx = noise(3, static_cast<int>(state.range(0)), static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(m.prepare_context(ctx).flops);
}
BENCHMARK(BM_PrepareContext)->Arg(96)->Arg(192)->Unit(benchmark::kMillisecond);

void BM_RoiCached(benchmark::State& state) {
  ClsrModel<float> m(bench_config(), 0);
  m.set_training(false);
  const Image ctx = noise(3, 192, 192, 3);
  const auto prepared = m.prepare_context(ctx);
  for (auto _ : state) benchmark::DoNotOptimize(restore_roi(m, prepared, {80, 80, 24, 24}, 8));
}
BENCHMARK(BM_RoiCached)->Unit(benchmark::kMillisecond);

void BM_RoiCold(benchmark::State& state) {
  ClsrModel<float> m(bench_config(), 0);
  m.set_training(false);
  const Image ctx = noise(3, 192, 192, 3);
  for (auto _ : state) benchmark::DoNotOptimize(restore_roi(m, m.prepare_context(ctx), {80, 80, 24, 24}, 8));
}
BENCHMARK(BM_RoiCold)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace clsr

BENCHMARK_MAIN();
