// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sddg/fourier.hpp"
#include "sddg/tensor.hpp"

namespace sddg {

enum class TexturePattern { rings, dots };

TexturePattern parse_pattern(const std::string& name);
std::string pattern_name(TexturePattern p);

/// Class-defining texture. The class cue is carried by the pattern geometry
/// (ring frequency vs dot-grid frequency), which survives in the phase
/// spectrum under amplitude perturbation.
struct TextureParams {
  TexturePattern pattern = TexturePattern::rings;
  double base_freq = 3.0;    // cycles per image side
  double orientation = 0.0;  // radians
  double amplitude = 0.8;    // pattern contrast in [0, 1]

  bool operator==(const TextureParams&) const = default;
};

/// Domain nuisance, applied identically to both classes.
struct DomainStyle {
  double contrast = 1.0;    // gain about mid-gray
  double brightness = 0.0;  // additive shift
  double blur_sigma = 0.0;  // Gaussian blur, pixels
  double noise_sigma = 0.0; // additive Gaussian noise
  double tilt = 0.0;        // >0 sharpens, <0 softens (unsharp mask)
};

struct DomainSpec {
  std::string name;
  TextureParams class0_texture;
  TextureParams class1_texture;
  DomainStyle style;
  int size = 2000;
  int image_size = 64;
  std::uint64_t seed = 0;
};

struct LabeledDataset {
  Tensor<float> images;  // M x 1 x H x W in [0, 1]
  std::vector<int> labels;
  std::string domain_name;

  int size() const { return images.n; }
};

/// Deterministic given the spec (including its seed). Class identity comes
/// only from the texture parameters; the style is shared by both classes.
LabeledDataset generate_domain(const DomainSpec& spec);

Image render_sample(const DomainSpec& spec, int index);

/// source: a directory of PNGs, or "procedural" for the built-in generator
/// (mixed-frequency gradients, blobs and stripes).
NaturalPool load_natural_pool(const std::string& source, int n, int image_size,
                              std::uint64_t seed);

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

/// Stateless batch source: every batch is a pure function of (seed, index),
/// which is what makes checkpoint resume replay the exact stream.
class DataLoader {
 public:
  /// crop_pad: reflect-pad margin for train-mode random crops; -1 selects the
  /// default image_size/16, 0 disables cropping.
  DataLoader(const LabeledDataset& ds, int batch_size, bool train, int crop_pad,
             std::uint64_t seed);

  /// Train mode: infinite stream, shuffled per epoch, random-cropped.
  /// Eval mode: deterministic pass, no augmentation, final batch may be short.
  Batch batch(std::uint64_t index) const;

  int batch_size() const { return batch_size_; }
  int num_eval_batches() const;

 private:
  const LabeledDataset* ds_;
  int batch_size_;
  bool train_;
  int crop_pad_;
  std::uint64_t seed_;
};

void save_dataset(const LabeledDataset& ds, const std::string& dir);
LabeledDataset load_dataset(const std::string& dir);

Image resize_bilinear(const Image& src, int h, int w);
void gaussian_blur_inplace(Image& img, double sigma);

}  // namespace sddg
