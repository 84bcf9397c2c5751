// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include "sddg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "sddg/image_io.hpp"
#include "sddg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sddg {

TexturePattern parse_pattern(const std::string& name) {
  if (name == "rings") return TexturePattern::rings;
  if (name == "dots") return TexturePattern::dots;
  throw std::invalid_argument("unknown texture pattern: " + name);
}

std::string pattern_name(TexturePattern p) {
  return p == TexturePattern::rings ? "rings" : "dots";
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void render_texture(const TextureParams& tex, Rng& rng, Image& img) {
  const int s = img.h;
  const double freq = tex.base_freq * (1.0 + 0.15 * rng.uniform(-1.0, 1.0));
  const double theta = tex.orientation + 0.1 * rng.uniform(-1.0, 1.0);
  const double ct = std::cos(theta), st = std::sin(theta);
  if (tex.pattern == TexturePattern::rings) {
    const double cx = 0.5 * s + 0.1 * s * rng.uniform(-1.0, 1.0);
    const double cy = 0.5 * s + 0.1 * s * rng.uniform(-1.0, 1.0);
    const double phase = rng.uniform(0.0, kTwoPi);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = ct * dx + st * dy;
        const double v = -st * dx + ct * dy;
        const double r = std::hypot(u, 0.85 * v);
        img.at(y, x) = 0.5 + 0.5 * tex.amplitude * std::sin(kTwoPi * freq * r / s + phase);
      }
  } else {
    const double p1 = rng.uniform(0.0, kTwoPi);
    const double p2 = rng.uniform(0.0, kTwoPi);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double u = ct * x + st * y;
        const double v = -st * x + ct * y;
        img.at(y, x) = 0.5 + 0.5 * tex.amplitude * std::sin(kTwoPi * freq * u / s + p1) *
                                 std::sin(kTwoPi * freq * v / s + p2);
      }
  }
}

void add_background(Rng& rng, Image& img) {
  const int s = img.h;
  for (int wave = 0; wave < 2; ++wave) {
    const double ang = rng.uniform(0.0, kTwoPi);
    const double freq = rng.uniform(0.5, 1.5);
    const double phase = rng.uniform(0.0, kTwoPi);
    const double kx = std::cos(ang) * kTwoPi * freq / s;
    const double ky = std::sin(ang) * kTwoPi * freq / s;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        img.at(y, x) += 0.06 * std::sin(kx * x + ky * y + phase);
  }
}

int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

void apply_style(const DomainStyle& style, Rng& rng, Image& img) {
  if (style.blur_sigma > 0.0) gaussian_blur_inplace(img, style.blur_sigma);
  if (style.tilt != 0.0) {
    Image low = img;
    gaussian_blur_inplace(low, 1.0);
    for (std::size_t i = 0; i < img.v.size(); ++i)
      img.v[i] += style.tilt * (img.v[i] - low.v[i]);
  }
  for (auto& p : img.v) p = 0.5 + style.contrast * (p - 0.5) + style.brightness;
  if (style.noise_sigma > 0.0)
    for (auto& p : img.v) p += style.noise_sigma * rng.normal();
  for (auto& p : img.v) p = std::min(1.0, std::max(0.0, p));
}

}  // namespace

void gaussian_blur_inplace(Image& img, double sigma) {
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  Image tmp(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * img.at(y, reflect_index(x + i, img.w));
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * tmp.at(reflect_index(y + i, img.h), x);
      img.at(y, x) = acc;
    }
}

Image render_sample(const DomainSpec& spec, int index) {
  const int label = index % 2;
  const TextureParams& tex = label == 0 ? spec.class0_texture : spec.class1_texture;
  Rng rng = rng_stream(spec.seed, "sample", std::uint64_t(index));
  Image img(spec.image_size, spec.image_size);
  render_texture(tex, rng, img);
  add_background(rng, img);
  apply_style(spec.style, rng, img);
  return img;
}

LabeledDataset generate_domain(const DomainSpec& spec) {
  check(spec.size >= 2, "generate_domain: need at least 2 samples");
  check(spec.image_size >= 8, "generate_domain: image_size too small");
  check(!(spec.class0_texture == spec.class1_texture),
        "generate_domain: degenerate spec, class textures are identical");
  LabeledDataset ds;
  ds.domain_name = spec.name;
  ds.images = Tensor<float>(spec.size, 1, spec.image_size, spec.image_size);
  ds.labels.resize(spec.size);
  for (int i = 0; i < spec.size; ++i) {
    ds.labels[i] = i % 2;
    const Image img = render_sample(spec, i);
    float* dst = ds.images.plane(i, 0);
    for (std::size_t j = 0; j < img.v.size(); ++j) dst[j] = float(img.v[j]);
  }
  return ds;
}

Image resize_bilinear(const Image& src, int h, int w) {
  Image out(h, w);
  const double sy = double(src.h) / h, sx = double(src.w) / w;
  for (int y = 0; y < h; ++y) {
    const double fy = std::min((y + 0.5) * sy - 0.5, double(src.h - 1));
    const int y0 = std::max(0, int(std::floor(fy)));
    const int y1 = std::min(src.h - 1, y0 + 1);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::min((x + 0.5) * sx - 0.5, double(src.w - 1));
      const int x0 = std::max(0, int(std::floor(fx)));
      const int x1 = std::min(src.w - 1, x0 + 1);
      const double wx = fx - x0;
      out.at(y, x) = (1 - wy) * ((1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
                     wy * ((1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1));
    }
  }
  return out;
}

namespace {

Image procedural_scene(int image_size, Rng& rng, int kind) {
  Image img(image_size, image_size);
  const int s = image_size;
  switch (kind) {
    case 0: {  // smooth gradient plus a soft sweep
      const double ang = rng.uniform(0.0, kTwoPi);
      const double kx = std::cos(ang) / s, ky = std::sin(ang) / s;
      const double off = rng.uniform();
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) img.at(y, x) = off + kx * x + ky * y;
      break;
    }
    case 1: {  // Gaussian blobs
      const int blobs = 4 + int(rng.below(5));
      img.v.assign(img.v.size(), 0.5);
      for (int b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(0.0, s), cy = rng.uniform(0.0, s);
        const double sig = rng.uniform(0.05, 0.25) * s;
        const double amp = rng.uniform(-0.5, 0.5);
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            img.at(y, x) += amp * std::exp(-0.5 * d2 / (sig * sig));
          }
      }
      break;
    }
    case 2: {  // stripes
      const double ang = rng.uniform(0.0, kTwoPi);
      const double freq = rng.uniform(2.0, 12.0);
      const double phase = rng.uniform(0.0, kTwoPi);
      const double kx = std::cos(ang) * kTwoPi * freq / s;
      const double ky = std::sin(ang) * kTwoPi * freq / s;
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          img.at(y, x) = 0.5 + 0.5 * std::sin(kx * x + ky * y + phase);
      break;
    }
    default: {  // pink noise: 1/f^a amplitude, random phase
      const double slope = rng.uniform(1.2, 1.8);
      SpectrumPair sp;
      sp.h = s;
      sp.w = s;
      sp.amplitude.assign(std::size_t(s) * s, 0.0);
      sp.phase.assign(std::size_t(s) * s, 0.0);
      Image noise(s, s);
      for (auto& p : noise.v) p = rng.uniform();
      sp = decompose(noise);  // phases of white noise, conjugate-symmetric
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const int fy = y <= s / 2 ? y : y - s;
          const int fx = x <= s / 2 ? x : x - s;
          const double f = std::max(1.0, std::hypot(double(fx), double(fy)));
          sp.amplitude[std::size_t(y) * s + x] = std::pow(f, -slope) * s * s;
        }
      img = recompose(sp);
      break;
    }
  }
  // min-max normalize, then spread brightness/contrast so the pool's DC and
  // global-gain statistics cover a wide range of styles
  const auto [lo_it, hi_it] = std::minmax_element(img.v.begin(), img.v.end());
  const double lo = *lo_it, hi = *hi_it;
  const double span = std::max(1e-9, hi - lo);
  const double gain = rng.uniform(0.5, 1.4);
  const double shift = rng.uniform(-0.25, 0.25);
  for (auto& p : img.v) {
    p = (p - lo) / span;
    p = std::min(1.0, std::max(0.0, 0.5 + gain * (p - 0.5) + shift));
  }
  return img;
}

}  // namespace

NaturalPool load_natural_pool(const std::string& source, int n, int image_size,
                              std::uint64_t seed) {
  check(n >= 1, "load_natural_pool: n must be >= 1");
  NaturalPool pool;
  if (source == "procedural") {
    for (int i = 0; i < n; ++i) {
      Rng rng = rng_stream(seed, "pool", std::uint64_t(i));
      // mostly smooth scenes (photo-like spectra); stripes stay rare
      const int kind = (i % 8 == 7) ? 2 : (i % 3 == 2 ? 3 : i % 3);
      pool.images.push_back(procedural_scene(image_size, rng, kind));
    }
  } else {
    if (!fs::is_directory(source))
      throw std::runtime_error("natural pool directory not found: " + source);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(source))
      if (e.is_regular_file() && e.path().extension() == ".png")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw std::runtime_error("natural pool directory has no PNGs: " + source);
    if (int(files.size()) < n)
      throw std::runtime_error("natural pool has fewer than n images: " + source);
    for (int i = 0; i < n; ++i) {
      Image img = read_png_gray(files[i].string());
      if (img.h != image_size || img.w != image_size)
        img = resize_bilinear(img, image_size, image_size);
      pool.images.push_back(std::move(img));
    }
  }
  pool.build_spectra();
  return pool;
}

DataLoader::DataLoader(const LabeledDataset& ds, int batch_size, bool train,
                       int crop_pad, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), train_(train), crop_pad_(crop_pad),
      seed_(seed) {
  check(batch_size >= 1, "make_loader: batch_size must be >= 1");
  check(batch_size <= ds.size(), "make_loader: batch_size exceeds dataset size");
  if (crop_pad_ < 0) crop_pad_ = ds.images.h / 16;
}

int DataLoader::num_eval_batches() const {
  return (ds_->size() + batch_size_ - 1) / batch_size_;
}

Batch DataLoader::batch(std::uint64_t index) const {
  const int m = ds_->size();
  const int s = ds_->images.h;
  Batch out;
  if (!train_) {
    const int begin = int(index) * batch_size_;
    check(begin < m, "eval loader: batch index past end");
    const int count = std::min(batch_size_, m - begin);
    out.images = Tensor<float>(count, 1, s, s);
    out.labels.resize(count);
    for (int j = 0; j < count; ++j) {
      std::copy_n(ds_->images.plane(begin + j, 0), std::size_t(s) * s,
                  out.images.plane(j, 0));
      out.labels[j] = ds_->labels[begin + j];
    }
    return out;
  }

  out.images = Tensor<float>(batch_size_, 1, s, s);
  out.labels.resize(batch_size_);
  const int pad = crop_pad_;
  // a batch touches at most two epochs
  std::uint64_t cached_epoch = UINT64_MAX;
  std::vector<int> perm;
  const auto epoch_perm = [&](std::uint64_t epoch) -> const std::vector<int>& {
    if (epoch != cached_epoch) {
      Rng perm_rng = rng_stream(seed_, "epoch", epoch);
      perm.resize(m);
      std::iota(perm.begin(), perm.end(), 0);
      for (int i = m - 1; i > 0; --i)
        std::swap(perm[i], perm[int(perm_rng.below(std::uint64_t(i) + 1))]);
      cached_epoch = epoch;
    }
    return perm;
  };
  for (int j = 0; j < batch_size_; ++j) {
    const std::uint64_t g = index * std::uint64_t(batch_size_) + j;
    const std::uint64_t epoch = g / std::uint64_t(m);
    const int pos = int(g % std::uint64_t(m));
    const int idx = epoch_perm(epoch)[pos];
    out.labels[j] = ds_->labels[idx];

    const float* src = ds_->images.plane(idx, 0);
    float* dst = out.images.plane(j, 0);
    if (pad == 0) {
      std::copy_n(src, std::size_t(s) * s, dst);
      continue;
    }
    Rng crop_rng = rng_stream(seed_, "crop", g);
    const int dy = int(crop_rng.below(2 * std::uint64_t(pad) + 1));
    const int dx = int(crop_rng.below(2 * std::uint64_t(pad) + 1));
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const int sy = reflect_index(y + dy - pad, s);
        const int sx = reflect_index(x + dx - pad, s);
        dst[y * s + x] = src[sy * s + sx];
      }
  }
  return out;
}

void save_dataset(const LabeledDataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  json index;
  index["format_version"] = 1;
  index["domain"] = ds.domain_name;
  index["image_size"] = ds.images.h;
  json samples = json::array();
  const int s = ds.images.h;
  for (int i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05d.png", i);
    Image img(s, s);
    const float* src = ds.images.plane(i, 0);
    for (std::size_t j = 0; j < img.v.size(); ++j) img.v[j] = src[j];
    write_png_gray((fs::path(dir) / name).string(), img);
    samples.push_back({{"path", name}, {"label", ds.labels[i]}});
  }
  index["samples"] = std::move(samples);
  std::ofstream out(fs::path(dir) / "index.json");
  out << index.dump(2) << "\n";
}

LabeledDataset load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "index.json");
  if (!in) throw std::runtime_error("dataset index not found in " + dir);
  json index = json::parse(in);
  const int s = index.at("image_size").get<int>();
  const auto& samples = index.at("samples");
  LabeledDataset ds;
  ds.domain_name = index.at("domain").get<std::string>();
  ds.images = Tensor<float>(int(samples.size()), 1, s, s);
  ds.labels.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Image img =
        read_png_gray((fs::path(dir) / samples[i].at("path").get<std::string>()).string());
    check(img.h == s && img.w == s, "load_dataset: image size mismatch");
    float* dst = ds.images.plane(int(i), 0);
    for (std::size_t j = 0; j < img.v.size(); ++j) dst[j] = float(img.v[j]);
    ds.labels[i] = samples[i].at("label").get<int>();
  }
  check(!ds.labels.empty(), "load_dataset: empty dataset");
  return ds;
}

}  // namespace sddg
