// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "sddg/tensor.hpp"

namespace sddg {

/// One grayscale image plane in double precision, values nominally in [0, 1].
struct Image {
  int h = 0, w = 0;
  std::vector<double> v;

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), v(std::size_t(h_) * w_, 0.0) {}
  double& at(int y, int x) { return v[std::size_t(y) * w + x]; }
  double at(int y, int x) const { return v[std::size_t(y) * w + x]; }
};

/// Amplitude and phase of the full (unshifted) 2-D spectrum.
struct SpectrumPair {
  int h = 0, w = 0;
  std::vector<double> amplitude;  // >= 0 everywhere
  std::vector<double> phase;      // in (-pi, pi]
};

SpectrumPair decompose(const Image& image);

/// Pointwise (1 - lambda) * a_src + lambda * a_nat; lambda in [0, 1].
std::vector<double> mix_amplitude(const std::vector<double>& a_src,
                                  const std::vector<double>& a_nat, double lambda);

/// Inverse transform of amplitude * exp(i phase), real part clipped to [0, 1].
/// max_imag_residual, when given, receives the largest |imaginary| component
/// before it is discarded.
Image recompose(const SpectrumPair& spectrum, double* max_imag_residual = nullptr);

enum class LambdaMode { per_image, per_batch };

struct PerturbConfig {
  double eta = 1.0;  // lambda ~ U(0, eta)
  LambdaMode lambda_mode = LambdaMode::per_image;
  std::uint64_t seed = 0;
};

/// Pool of natural images with precomputed amplitude spectra.
struct NaturalPool {
  std::vector<Image> images;
  std::vector<SpectrumPair> spectra;

  void build_spectra();
  std::size_t size() const { return images.size(); }
};

/// Amplitude-mixup perturbation of a whole batch. Labels are untouched; the
/// caller keeps them. Draws are keyed by (cfg.seed, step, image index) so a
/// resumed run replays the same perturbations.
struct PerturbDraws {
  std::vector<double> lambdas;
  std::vector<std::uint32_t> partners;
};

Tensor<float> perturb_batch(const Tensor<float>& src, const NaturalPool& pool,
                            const PerturbConfig& cfg, std::uint64_t step,
                            PerturbDraws* draws = nullptr);

}  // namespace sddg
