// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include "sddg/model.hpp"

#include <numeric>
#include <stdexcept>

#include "sddg/rng.hpp"

namespace sddg {

Arch parse_arch(std::string_view name) {
  if (name == "tiny_cnn") return Arch::tiny_cnn;
  if (name == "resnet18") return Arch::resnet18;
  throw std::invalid_argument("unknown arch: " + std::string(name));
}

std::string_view arch_name(Arch a) {
  return a == Arch::tiny_cnn ? "tiny_cnn" : "resnet18";
}

std::size_t ParamLayout::add(std::string name, std::vector<int> shape) {
  std::size_t size = 1;
  for (int d : shape) size *= std::size_t(d);
  const std::size_t off = total;
  entries.push_back({std::move(name), std::move(shape), off, size});
  total += size;
  return off;
}

const ParamInfo* ParamLayout::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

namespace {

ConvSpec add_conv(ParamLayout& layout, const std::string& prefix, int cin, int cout,
                  int k, int stride, int pad, bool bias) {
  ConvSpec cs{cin, cout, k, stride, pad, bias};
  cs.w = layout.add(prefix + ".w", {cout, cin, k, k});
  if (bias) cs.b = layout.add(prefix + ".b", {cout});
  return cs;
}

NormSpec add_norm(ParamLayout& layout, ParamLayout& buffers, const std::string& prefix,
                  int c) {
  NormSpec ns{c};
  ns.gamma = layout.add(prefix + ".gamma", {c});
  ns.beta = layout.add(prefix + ".beta", {c});
  ns.rmean = buffers.add(prefix + ".rmean", {c});
  ns.rvar = buffers.add(prefix + ".rvar", {c});
  return ns;
}

LinSpec add_linear(ParamLayout& layout, const std::string& prefix, int in, int out) {
  LinSpec ls{in, out};
  ls.w = layout.add(prefix + ".w", {out, in});
  ls.b = layout.add(prefix + ".b", {out});
  return ls;
}

void validate(const BackboneConfig& cfg, const DynamicBlockConfig& dyn) {
  check(cfg.in_channels >= 1, "in_channels must be >= 1");
  check(cfg.feature_channels > 0, "feature_channels must be > 0");
  check(cfg.image_size >= 8, "image_size must be >= 8");
  if (cfg.arch == Arch::tiny_cnn) {
    check(cfg.image_size % 8 == 0, "tiny_cnn: image_size must be divisible by 8");
    check(cfg.feature_channels >= 8 && cfg.feature_channels % 2 == 0,
          "tiny_cnn: feature_channels must be even and >= 8");
  } else {
    check(cfg.feature_channels == 512, "resnet18: feature_channels must be 512");
    check(cfg.image_size >= 32 && cfg.image_size % 4 == 0,
          "resnet18: image_size must be >= 32 and divisible by 4");
  }
  if (dyn.enabled) {
    check(dyn.k >= 2, "dynamic block: k must be >= 2 (a 1-way mixture is degenerate)");
    check(dyn.reduction >= 1 && dyn.reduction <= cfg.feature_channels,
          "dynamic block: invalid reduction");
  }
}

}  // namespace

ModelDef build_model_def(const BackboneConfig& cfg, const DynamicBlockConfig& dyn) {
  validate(cfg, dyn);
  ModelDef def;
  def.backbone = cfg;
  def.dyn_cfg = dyn;

  if (cfg.arch == Arch::tiny_cnn) {
    const int widths[3] = {std::max(4, cfg.feature_channels / 2),
                           cfg.feature_channels, cfg.feature_channels};
    int cin = cfg.in_channels;
    for (int s = 0; s < 3; ++s) {
      const std::string p = "backbone.s" + std::to_string(s);
      def.tiny.conv[s] = add_conv(def.layout_f, p + ".conv", cin, widths[s], 3, 1, 1,
                                  /*bias=*/true);
      def.tiny.bn[s] = add_norm(def.layout_f, def.buffers, p + ".bn", widths[s]);
      cin = widths[s];
    }
    def.feature_h = def.feature_w = cfg.image_size / 8;
  } else {
    def.resnet.stem = add_conv(def.layout_f, "backbone.stem.conv", cfg.in_channels,
                               64, 7, 2, 3, /*bias=*/false);
    def.resnet.stem_bn = add_norm(def.layout_f, def.buffers, "backbone.stem.bn", 64);
    const int widths[4] = {64, 128, 256, 512};
    int cin = 64;
    for (int layer = 0; layer < 4; ++layer) {
      for (int b = 0; b < 2; ++b) {
        const int cout = widths[layer];
        const int stride = (layer > 0 && b == 0) ? 2 : 1;
        const std::string p =
            "backbone.layer" + std::to_string(layer + 1) + "." + std::to_string(b);
        ResBlockSpec blk;
        blk.conv1 = add_conv(def.layout_f, p + ".conv1", cin, cout, 3, stride, 1, false);
        blk.bn1 = add_norm(def.layout_f, def.buffers, p + ".bn1", cout);
        blk.conv2 = add_conv(def.layout_f, p + ".conv2", cout, cout, 3, 1, 1, false);
        blk.bn2 = add_norm(def.layout_f, def.buffers, p + ".bn2", cout);
        if (stride != 1 || cin != cout) {
          blk.has_down = true;
          blk.down_conv =
              add_conv(def.layout_f, p + ".down.conv", cin, cout, 1, stride, 0, false);
          blk.down_bn = add_norm(def.layout_f, def.buffers, p + ".down.bn", cout);
        }
        def.resnet.blocks.push_back(blk);
        cin = cout;
      }
    }
    int s = conv_out_dim(cfg.image_size, 7, 2, 3);
    s = conv_out_dim(s, 3, 2, 1);
    for (int layer = 1; layer < 4; ++layer) s = conv_out_dim(s, 3, 2, 1);
    def.feature_h = def.feature_w = s;
  }

  const int c = cfg.feature_channels;
  if (dyn.enabled) {
    def.dyn.channels = c;
    def.dyn.k = dyn.k;
    def.dyn.hidden = std::max(1, c / dyn.reduction);
    def.dyn.in_eps = dyn.in_eps;
    def.dyn.in_affine = dyn.in_affine;
    auto conv = add_conv(def.layout_d, "dyn.inv_conv", c, c, 3, 1, 1, /*bias=*/true);
    def.dyn.inv_conv = {conv.cin, conv.cout, conv.bias, conv.w, conv.b};
    if (dyn.in_affine) {
      def.dyn.in_gamma = def.layout_d.add("dyn.in.gamma", {c});
      def.dyn.in_beta = def.layout_d.add("dyn.in.beta", {c});
    }
    for (int k = 0; k < dyn.k; ++k) {
      auto sc = add_conv(def.layout_d, "dyn.spec" + std::to_string(k), c, c, 3, 1, 1,
                         /*bias=*/false);
      def.dyn.spec_convs.push_back({sc.cin, sc.cout, sc.bias, sc.w, sc.b});
    }
    auto fc1 = add_linear(def.layout_d, "dyn.fc1", c, def.dyn.hidden);
    def.dyn.fc1 = {fc1.in, fc1.out, fc1.w, fc1.b};
    auto fc2 = add_linear(def.layout_d, "dyn.fc2", def.dyn.hidden, dyn.k);
    def.dyn.fc2 = {fc2.in, fc2.out, fc2.w, fc2.b};
  }

  def.classifier = add_linear(def.layout_c, "cls.fc", c, 2);
  return def;
}

void init_params(const ModelDef& def, std::uint64_t seed, ParamVecs<float>& params,
                 std::vector<float>& buffers) {
  params.f.assign(def.layout_f.total, 0.f);
  params.d.assign(def.layout_d.total, 0.f);
  params.c.assign(def.layout_c.total, 0.f);

  const auto fill_group = [&](const ParamLayout& layout, std::vector<float>& out) {
    for (const auto& e : layout.entries) {
      Rng rng = rng_stream(seed, e.name);
      const bool is_weight = e.name.ends_with(".w");
      const bool is_gamma = e.name.ends_with(".gamma");
      if (is_gamma) {
        std::fill_n(out.begin() + e.offset, e.size, 1.f);
      } else if (is_weight) {
        // fan-in from the trailing dims of the shape
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < e.shape.size(); ++d) fan_in *= std::size_t(e.shape[d]);
        double std_dev = std::sqrt(2.0 / double(fan_in));
        if (e.name == "dyn.fc2.w") std_dev = 0.01;  // keep initial mixtures near uniform
        for (std::size_t i = 0; i < e.size; ++i)
          out[e.offset + i] = float(rng.normal() * std_dev);
      }
      // biases and betas stay zero
    }
  };
  fill_group(def.layout_f, params.f);
  fill_group(def.layout_d, params.d);
  fill_group(def.layout_c, params.c);

  buffers.assign(def.buffers.total, 0.f);
  for (const auto& e : def.buffers.entries)
    if (e.name.ends_with(".rvar"))
      std::fill_n(buffers.begin() + e.offset, e.size, 1.f);
}

ModelState build_model(const BackboneConfig& cfg, const DynamicBlockConfig& dyn,
                       std::uint64_t seed) {
  ModelState m;
  m.def = build_model_def(cfg, dyn);
  init_params(m.def, seed, m.params, m.buffers);
  return m;
}

ModelState build_model(const BackboneConfig& cfg, int k, std::uint64_t seed) {
  DynamicBlockConfig dyn;
  dyn.k = k;
  return build_model(cfg, dyn, seed);
}

}  // namespace sddg
