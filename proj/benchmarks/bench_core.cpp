// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "vertenet/fusion.hpp"
#include "vertenet/model.hpp"
#include "vertenet/spline.hpp"

using namespace vertenet;

namespace {

void BM_Conv2d3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor x = Tensor::randn({1, c, 64, 32}, rng);
  Tensor w = Tensor::randn({c, c, 3, 3}, rng, 0.2);
  NoGradGuard value_only;
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, w, 1, 1).data().data());
  }
}
BENCHMARK(BM_Conv2d3x3)->Arg(8)->Arg(16)->Arg(32);

void BM_Matmul(benchmark::State& state) {
  const int t = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor a = Tensor::randn({32, 2, t, 8}, rng);
  Tensor b = Tensor::randn({32, 2, 8, t}, rng);
  NoGradGuard value_only;
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b).data().data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(100);

void BM_DrsaForward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(3);
  const WindowSpec spec{10, 2, 1, 1};
  AttentionParams params = AttentionParams::init(8, spec, rng);
  Tensor x = Tensor::randn({1, 8, side, side / 2}, rng);
  NoGradGuard value_only;
  for (auto _ : state) {
    benchmark::DoNotOptimize(drsa_forward(x, params, spec).data().data());
  }
}
BENCHMARK(BM_DrsaForward)->Arg(20)->Arg(40)->Arg(64);

void BM_McfbFuse(benchmark::State& state) {
  Rng rng(4);
  const WindowSpec spec{10, 2, 1, 1};
  McfbParams params = McfbParams::init(FusionMode::Full, 8, 8, spec, 2, true, rng);
  Tensor a = Tensor::randn({1, 8, 32, 16}, rng);
  Tensor b = Tensor::randn({1, 8, 32, 16}, rng);
  NoGradGuard value_only;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mcfb_fuse(a, b, params).data().data());
  }
}
BENCHMARK(BM_McfbFuse);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.widths = {4, 8, 12, 16};
  const auto data = synth_generate(0, 2, 96, 64);
  Rng rng(5);
  VerteNetParams params = VerteNetParams::init(cfg, rng);
  TrainOptions opts;
  opts.lr = 1e-3;
  opts.steps = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(toy_train(params, cfg, data, opts));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_SplineFitAndSample(benchmark::State& state) {
  Rng rng(6);
  std::vector<Point> knots;
  double y = 0.0;
  for (int i = 0; i < 11; ++i) {
    y += rng.uniform(5.0, 12.0);
    knots.push_back({rng.uniform(-30.0, 30.0), y});
  }
  for (auto _ : state) {
    const auto spline = NaturalCubicSpline::fit(knots);
    benchmark::DoNotOptimize(sample_spline(spline, 500).data());
  }
}
BENCHMARK(BM_SplineFitAndSample);

}  // namespace

BENCHMARK_MAIN();
