// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "sddg/eval.hpp"
#include "sddg/fourier.hpp"
#include "sddg/net_program.hpp"
#include "sddg/rng.hpp"

namespace {

using namespace sddg;

ModelState bench_model(int channels, int image) {
  BackboneConfig cfg;
  cfg.feature_channels = channels;
  cfg.image_size = image;
  DynamicBlockConfig dyn;
  dyn.k = 3;
  return build_model(cfg, dyn, 7);
}

Batch bench_batch(int n, int s) {
  Batch b;
  b.images = Tensor<float>(n, 1, s, s);
  Rng rng(3);
  for (auto& v : b.images.v) v = float(rng.uniform());
  b.labels.resize(n);
  for (int i = 0; i < n; ++i) b.labels[i] = i % 2;
  return b;
}

void BM_conv3x3_forward(benchmark::State& state) {
  const int c = int(state.range(0));
  Rng rng(5);
  Tensor<float> x(8, c, 8, 8);
  for (auto& v : x.v) v = float(rng.uniform());
  std::vector<float> w(std::size_t(c) * c * 9);
  for (auto& v : w) v = float(rng.uniform(-0.1, 0.1));
  for (auto _ : state) {
    Tensor<float> y;
    conv2d_forward(x, w.data(), nullptr, c, 3, 3, 1, 1, y);
    benchmark::DoNotOptimize(y.v.data());
  }
}
BENCHMARK(BM_conv3x3_forward)->Arg(32)->Arg(64);

void BM_dynamic_block_forward(benchmark::State& state) {
  ModelState m = bench_model(32, 32);
  Rng rng(9);
  Tensor<float> f(8, 32, 4, 4);
  for (auto& v : f.v) v = float(rng.uniform());
  for (auto _ : state) {
    Tensor<float> out;
    Mat<float> w;
    dyn_forward(m.def.dyn, m.params.d.data(), f, nullptr, out, w);
    benchmark::DoNotOptimize(out.v.data());
  }
}
BENCHMARK(BM_dynamic_block_forward);

void BM_instance_norm(benchmark::State& state) {
  Rng rng(11);
  Tensor<float> x(8, 64, 8, 8);
  for (auto& v : x.v) v = float(rng.uniform());
  for (auto _ : state) {
    Tensor<float> y;
    instance_normalize(x, 1e-5f, y);
    benchmark::DoNotOptimize(y.v.data());
  }
}
BENCHMARK(BM_instance_norm);

void BM_amplitude_perturb(benchmark::State& state) {
  const NaturalPool pool = load_natural_pool("procedural", 16, 32, 3);
  Batch b = bench_batch(8, 32);
  PerturbConfig cfg;
  cfg.eta = 1.0;
  cfg.seed = 5;
  std::uint64_t step = 0;
  for (auto _ : state) {
    const Tensor<float> out = perturb_batch(b.images, pool, cfg, step++);
    benchmark::DoNotOptimize(out.v.data());
  }
}
BENCHMARK(BM_amplitude_perturb);

void BM_meta_step(benchmark::State& state) {
  ModelState m = bench_model(32, 32);
  const Batch bs = bench_batch(8, 32);
  const Batch bq = bench_batch(8, 32);
  MetaConfig cfg;
  cfg.alpha = 0.01;
  cfg.beta = 0.01;
  cfg.second_order = state.range(0) != 0;
  for (auto _ : state) {
    NetProgram<float> prog(m.def, bs, bq);
    auto res = sddg_meta_step(prog, m.params, cfg);
    benchmark::DoNotOptimize(res.losses.total);
  }
}
BENCHMARK(BM_meta_step)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
