// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include "sddg/fourier.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>

#include "sddg/rng.hpp"

namespace sddg {

namespace {

// FFTW plan creation is not thread-safe; execution is.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

struct FftBuf {
  fftw_complex* data;
  explicit FftBuf(std::size_t n) {
    data = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  }
  ~FftBuf() { fftw_free(data); }
  FftBuf(const FftBuf&) = delete;
  FftBuf& operator=(const FftBuf&) = delete;
};

}  // namespace

SpectrumPair decompose(const Image& image) {
  check(image.h >= 2 && image.w >= 2, "decompose: image too small");
  const std::size_t n = std::size_t(image.h) * image.w;
  FftBuf in(n), out(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.data[i][0] = image.v[i];
    in.data[i][1] = 0.0;
  }
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    plan = fftw_plan_dft_2d(image.h, image.w, in.data, out.data, FFTW_FORWARD,
                            FFTW_ESTIMATE | FFTW_PRESERVE_INPUT);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(plan);
  }
  SpectrumPair sp;
  sp.h = image.h;
  sp.w = image.w;
  sp.amplitude.resize(n);
  sp.phase.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sp.amplitude[i] = std::hypot(out.data[i][0], out.data[i][1]);
    sp.phase[i] = std::atan2(out.data[i][1], out.data[i][0]);
  }
  return sp;
}

std::vector<double> mix_amplitude(const std::vector<double>& a_src,
                                  const std::vector<double>& a_nat, double lambda) {
  check(a_src.size() == a_nat.size(), "mix_amplitude: shape mismatch");
  check(lambda >= 0.0 && lambda <= 1.0, "mix_amplitude: lambda out of [0,1]");
  std::vector<double> out(a_src.size());
  for (std::size_t i = 0; i < a_src.size(); ++i)
    out[i] = (1.0 - lambda) * a_src[i] + lambda * a_nat[i];
  return out;
}

Image recompose(const SpectrumPair& spectrum, double* max_imag_residual) {
  check(spectrum.amplitude.size() == spectrum.phase.size(),
        "recompose: amplitude/phase shape mismatch");
  const std::size_t n = std::size_t(spectrum.h) * spectrum.w;
  check(spectrum.amplitude.size() == n, "recompose: spectrum size mismatch");
  FftBuf in(n), out(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.data[i][0] = spectrum.amplitude[i] * std::cos(spectrum.phase[i]);
    in.data[i][1] = spectrum.amplitude[i] * std::sin(spectrum.phase[i]);
  }
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    plan = fftw_plan_dft_2d(spectrum.h, spectrum.w, in.data, out.data, FFTW_BACKWARD,
                            FFTW_ESTIMATE | FFTW_PRESERVE_INPUT);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(plan);
  }
  Image img(spectrum.h, spectrum.w);
  const double scale = 1.0 / double(n);
  double max_imag = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double re = out.data[i][0] * scale;
    const double im = std::abs(out.data[i][1]) * scale;
    if (im > max_imag) max_imag = im;
    img.v[i] = std::min(1.0, std::max(0.0, re));
  }
  if (max_imag_residual) *max_imag_residual = max_imag;
  return img;
}

void NaturalPool::build_spectra() {
  spectra.clear();
  spectra.reserve(images.size());
  for (const auto& img : images) spectra.push_back(decompose(img));
}

Tensor<float> perturb_batch(const Tensor<float>& src, const NaturalPool& pool,
                            const PerturbConfig& cfg, std::uint64_t step,
                            PerturbDraws* draws) {
  check(!pool.images.empty(), "perturb_batch: empty natural pool");
  check(cfg.eta >= 0.0 && cfg.eta <= 1.0, "perturb_batch: eta out of [0,1]");
  check(src.c == 1, "perturb_batch: expected grayscale batch");
  check(pool.spectra.size() == pool.images.size(),
        "perturb_batch: pool spectra not built");
  check(pool.images[0].h == src.h && pool.images[0].w == src.w,
        "perturb_batch: pool images must match batch size");

  Tensor<float> out(src.n, 1, src.h, src.w);
  const std::size_t plane = std::size_t(src.h) * src.w;
  double batch_lambda = 0.0;
  if (cfg.lambda_mode == LambdaMode::per_batch) {
    Rng rng = rng_stream(cfg.seed, "perturb.lambda", step);
    batch_lambda = rng.uniform() * cfg.eta;
  }
  for (int i = 0; i < src.n; ++i) {
    double lambda = batch_lambda;
    if (cfg.lambda_mode == LambdaMode::per_image) {
      Rng rng = rng_stream(cfg.seed, "perturb.lambda", step, std::uint64_t(i));
      lambda = rng.uniform() * cfg.eta;
    }
    Rng prng = rng_stream(cfg.seed, "perturb.partner", step, std::uint64_t(i));
    const auto partner = std::uint32_t(prng.below(pool.images.size()));
    if (draws) {
      draws->lambdas.push_back(lambda);
      draws->partners.push_back(partner);
    }
    const float* sp = src.plane(i, 0);
    float* dp = out.plane(i, 0);
    if (lambda == 0.0) {
      // exact endpoint: the spectrum round trip is skipped entirely
      for (std::size_t j = 0; j < plane; ++j) dp[j] = sp[j];
      continue;
    }
    Image img(src.h, src.w);
    for (std::size_t j = 0; j < plane; ++j) img.v[j] = double(sp[j]);
    SpectrumPair spec = decompose(img);
    spec.amplitude = mix_amplitude(spec.amplitude, pool.spectra[partner].amplitude,
                                   lambda);
    const Image mixed = recompose(spec);
    for (std::size_t j = 0; j < plane; ++j) dp[j] = float(mixed.v[j]);
  }
  return out;
}

}  // namespace sddg
