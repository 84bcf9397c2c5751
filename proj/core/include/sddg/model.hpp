// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sddg/dynamic_block.hpp"
#include "sddg/ops.hpp"
#include "sddg/tensor.hpp"

namespace sddg {

enum class Arch { tiny_cnn, resnet18 };

Arch parse_arch(std::string_view name);
std::string_view arch_name(Arch a);

struct BackboneConfig {
  Arch arch = Arch::tiny_cnn;
  int in_channels = 1;
  int feature_channels = 64;
  int image_size = 64;
  std::string pretrained_path;          // empty -> random init
  std::string pretrained_gray = "average";  // or "reinit"
};

struct DynamicBlockConfig {
  bool enabled = true;
  int k = 3;
  int reduction = 4;
  bool in_affine = false;
  double in_eps = 1e-5;
};

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct ParamLayout {
  std::vector<ParamInfo> entries;
  std::size_t total = 0;

  std::size_t add(std::string name, std::vector<int> shape);
  const ParamInfo* find(std::string_view name) const;
};

struct ConvSpec {
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  bool bias = true;
  std::size_t w = 0, b = 0;
};

struct NormSpec {
  int c = 0;
  std::size_t gamma = 0, beta = 0;  // into the partition vector
  std::size_t rmean = 0, rvar = 0;  // into the buffer vector
};

struct LinSpec {
  int in = 0, out = 0;
  std::size_t w = 0, b = 0;
};

struct TinyBackboneSpec {
  std::array<ConvSpec, 3> conv;
  std::array<NormSpec, 3> bn;
};

struct ResBlockSpec {
  ConvSpec conv1, conv2;
  NormSpec bn1, bn2;
  bool has_down = false;
  ConvSpec down_conv;
  NormSpec down_bn;
};

struct ResnetBackboneSpec {
  ConvSpec stem;
  NormSpec stem_bn;
  std::vector<ResBlockSpec> blocks;
};

/// Architecture plus resolved parameter layouts. theta_F / theta_D / theta_C
/// partition the trainable parameters; BN running statistics live in a
/// separate (non-trainable) buffer vector.
struct ModelDef {
  BackboneConfig backbone;
  DynamicBlockConfig dyn_cfg;
  TinyBackboneSpec tiny;
  ResnetBackboneSpec resnet;
  DynBlockSpec dyn;
  LinSpec classifier;
  ParamLayout layout_f, layout_d, layout_c;
  ParamLayout buffers;
  int feature_h = 0, feature_w = 0;

  std::size_t trainable_count() const {
    return layout_f.total + layout_d.total + layout_c.total;
  }
};

ModelDef build_model_def(const BackboneConfig& cfg, const DynamicBlockConfig& dyn);

template <class T>
struct ParamVecs {
  std::vector<T> f, d, c;
};

/// Canonical model value: definition + float parameters + BN buffers.
struct ModelState {
  ModelDef def;
  ParamVecs<float> params;
  std::vector<float> buffers;
};

void init_params(const ModelDef& def, std::uint64_t seed, ParamVecs<float>& params,
                 std::vector<float>& buffers);

ModelState build_model(const BackboneConfig& cfg, const DynamicBlockConfig& dyn,
                       std::uint64_t seed);
ModelState build_model(const BackboneConfig& cfg, int k, std::uint64_t seed);

template <class Src, class Dst>
ParamVecs<Dst> convert_params(const ParamVecs<Src>& p) {
  ParamVecs<Dst> out;
  out.f.assign(p.f.begin(), p.f.end());
  out.d.assign(p.d.begin(), p.d.end());
  out.c.assign(p.c.begin(), p.c.end());
  return out;
}

enum class BnMode { train, eval };

template <class T>
struct TinyStageCache {
  Tensor<T> in;
  BnCache<T> bn;
  Tensor<T> act;
};

template <class T>
struct ResBlockCache {
  Tensor<T> in;
  BnCache<T> bn1;
  Tensor<T> act1;
  BnCache<T> bn2;
  BnCache<T> down_bn;
  Tensor<T> out;
};

template <class T>
struct NetCache {
  std::array<TinyStageCache<T>, 3> tiny;
  BnCache<T> stem_bn;
  Tensor<T> stem_act;
  std::vector<int> pool_arg;
  Tensor<T> stem_in, pool_in, pool_out;
  std::vector<ResBlockCache<T>> blocks;
  Tensor<T> feature;   // backbone output (input of the dynamic block)
  DynCache<T> dyn;
  Tensor<T> head_in;   // dynamic-block output, or feature when disabled
  Mat<T> cls_pooled;
  Mat<T> logits;
};

namespace detail {

template <class T>
void tiny_forward(const ModelDef& def, const std::vector<T>& pf,
                  const std::vector<T>& buffers, BnMode mode, const Tensor<T>& x,
                  NetCache<T>& cache, Tensor<T>& feature) {
  Tensor<T> cur = x;
  const bool train = mode == BnMode::train;
  for (int s = 0; s < 3; ++s) {
    const ConvSpec& cv = def.tiny.conv[s];
    const NormSpec& bn = def.tiny.bn[s];
    auto& st = cache.tiny[s];
    Tensor<T> conv_out;
    conv2d_forward(cur, pf.data() + cv.w, cv.bias ? pf.data() + cv.b : nullptr,
                   cv.cout, cv.k, cv.k, cv.stride, cv.pad, conv_out);
    Tensor<T> bn_out;
    batchnorm_forward(conv_out, pf.data() + bn.gamma, pf.data() + bn.beta,
                      T(1e-5), train, buffers.data() + bn.rmean,
                      buffers.data() + bn.rvar, train ? &st.bn : nullptr, bn_out);
    relu_forward(bn_out, st.act);
    Tensor<T> pooled;
    avgpool2_forward(st.act, pooled);
    st.in = std::move(cur);
    cur = std::move(pooled);
  }
  feature = std::move(cur);
}

template <class T>
void tiny_backward(const ModelDef& def, const std::vector<T>& pf,
                   const NetCache<T>& cache, const Tensor<T>& g_feature,
                   std::vector<T>& gf) {
  Tensor<T> g_out = g_feature;
  for (int s = 2; s >= 0; --s) {
    const ConvSpec& cv = def.tiny.conv[s];
    const NormSpec& bn = def.tiny.bn[s];
    const auto& st = cache.tiny[s];
    Tensor<T> g_act(st.act.n, st.act.c, st.act.h, st.act.w);
    avgpool2_backward(g_out, g_act);
    Tensor<T> g_bn(st.act.n, st.act.c, st.act.h, st.act.w);
    relu_backward(st.act, g_act, g_bn);
    Tensor<T> g_conv(st.act.n, st.act.c, st.act.h, st.act.w);
    batchnorm_backward(st.bn, pf.data() + bn.gamma, g_bn, g_conv,
                       gf.data() + bn.gamma, gf.data() + bn.beta);
    Tensor<T> g_in;
    if (s > 0) g_in = Tensor<T>(st.in.n, st.in.c, st.in.h, st.in.w);
    conv2d_backward(st.in, pf.data() + cv.w, cv.cout, cv.k, cv.k, cv.stride, cv.pad,
                    g_conv, s > 0 ? &g_in : nullptr, gf.data() + cv.w,
                    cv.bias ? gf.data() + cv.b : nullptr);
    g_out = std::move(g_in);
  }
}

template <class T>
void resnet_forward(const ModelDef& def, const std::vector<T>& pf,
                    const std::vector<T>& buffers, BnMode mode, const Tensor<T>& x,
                    NetCache<T>& cache, Tensor<T>& feature) {
  const bool train = mode == BnMode::train;
  const auto& rs = def.resnet;
  Tensor<T> conv_out;
  conv2d_forward(x, pf.data() + rs.stem.w, nullptr, rs.stem.cout, rs.stem.k,
                 rs.stem.k, rs.stem.stride, rs.stem.pad, conv_out);
  Tensor<T> bn_out;
  batchnorm_forward(conv_out, pf.data() + rs.stem_bn.gamma,
                    pf.data() + rs.stem_bn.beta, T(1e-5), train,
                    buffers.data() + rs.stem_bn.rmean,
                    buffers.data() + rs.stem_bn.rvar, train ? &cache.stem_bn : nullptr,
                    bn_out);
  relu_forward(bn_out, cache.stem_act);
  maxpool_forward(cache.stem_act, 3, 2, 1, cache.pool_out, cache.pool_arg);
  cache.stem_in = x;

  Tensor<T> cur = cache.pool_out;
  cache.blocks.clear();
  cache.blocks.resize(rs.blocks.size());
  for (std::size_t b = 0; b < rs.blocks.size(); ++b) {
    const ResBlockSpec& blk = rs.blocks[b];
    auto& bc = cache.blocks[b];
    Tensor<T> c1;
    conv2d_forward(cur, pf.data() + blk.conv1.w, nullptr, blk.conv1.cout, 3, 3,
                   blk.conv1.stride, 1, c1);
    Tensor<T> b1;
    batchnorm_forward(c1, pf.data() + blk.bn1.gamma, pf.data() + blk.bn1.beta,
                      T(1e-5), train, buffers.data() + blk.bn1.rmean,
                      buffers.data() + blk.bn1.rvar, train ? &bc.bn1 : nullptr, b1);
    relu_forward(b1, bc.act1);
    Tensor<T> c2;
    conv2d_forward(bc.act1, pf.data() + blk.conv2.w, nullptr, blk.conv2.cout, 3, 3, 1,
                   1, c2);
    Tensor<T> main;
    batchnorm_forward(c2, pf.data() + blk.bn2.gamma, pf.data() + blk.bn2.beta,
                      T(1e-5), train, buffers.data() + blk.bn2.rmean,
                      buffers.data() + blk.bn2.rvar, train ? &bc.bn2 : nullptr, main);
    Tensor<T> skip;
    if (blk.has_down) {
      Tensor<T> dc;
      conv2d_forward(cur, pf.data() + blk.down_conv.w, nullptr, blk.down_conv.cout, 1,
                     1, blk.down_conv.stride, 0, dc);
      batchnorm_forward(dc, pf.data() + blk.down_bn.gamma,
                        pf.data() + blk.down_bn.beta, T(1e-5), train,
                        buffers.data() + blk.down_bn.rmean,
                        buffers.data() + blk.down_bn.rvar,
                        train ? &bc.down_bn : nullptr, skip);
    } else {
      skip = cur;
    }
    for (std::size_t j = 0; j < main.v.size(); ++j) main.v[j] += skip.v[j];
    relu_forward(main, bc.out);
    bc.in = std::move(cur);
    cur = bc.out;
  }
  feature = std::move(cur);
}

template <class T>
void resnet_backward(const ModelDef& def, const std::vector<T>& pf,
                     const NetCache<T>& cache, const Tensor<T>& g_feature,
                     std::vector<T>& gf) {
  const auto& rs = def.resnet;
  Tensor<T> g_out = g_feature;
  for (int b = int(rs.blocks.size()) - 1; b >= 0; --b) {
    const ResBlockSpec& blk = rs.blocks[b];
    const auto& bc = cache.blocks[b];
    Tensor<T> g_sum(bc.out.n, bc.out.c, bc.out.h, bc.out.w);
    relu_backward(bc.out, g_out, g_sum);
    Tensor<T> g_in(bc.in.n, bc.in.c, bc.in.h, bc.in.w);
    // main path
    {
      Tensor<T> g_c2(g_sum.n, g_sum.c, g_sum.h, g_sum.w);
      batchnorm_backward(bc.bn2, pf.data() + blk.bn2.gamma, g_sum, g_c2,
                         gf.data() + blk.bn2.gamma, gf.data() + blk.bn2.beta);
      Tensor<T> g_act1(bc.act1.n, bc.act1.c, bc.act1.h, bc.act1.w);
      conv2d_backward(bc.act1, pf.data() + blk.conv2.w, blk.conv2.cout, 3, 3, 1, 1,
                      g_c2, &g_act1, gf.data() + blk.conv2.w, nullptr);
      Tensor<T> g_b1(bc.act1.n, bc.act1.c, bc.act1.h, bc.act1.w);
      relu_backward(bc.act1, g_act1, g_b1);
      Tensor<T> g_c1(bc.act1.n, bc.act1.c, bc.act1.h, bc.act1.w);
      batchnorm_backward(bc.bn1, pf.data() + blk.bn1.gamma, g_b1, g_c1,
                         gf.data() + blk.bn1.gamma, gf.data() + blk.bn1.beta);
      conv2d_backward(bc.in, pf.data() + blk.conv1.w, blk.conv1.cout, 3, 3,
                      blk.conv1.stride, 1, g_c1, &g_in, gf.data() + blk.conv1.w,
                      nullptr);
    }
    // skip path
    if (blk.has_down) {
      Tensor<T> g_dc(g_sum.n, g_sum.c, g_sum.h, g_sum.w);
      batchnorm_backward(bc.down_bn, pf.data() + blk.down_bn.gamma, g_sum, g_dc,
                         gf.data() + blk.down_bn.gamma, gf.data() + blk.down_bn.beta);
      conv2d_backward(bc.in, pf.data() + blk.down_conv.w, blk.down_conv.cout, 1, 1,
                      blk.down_conv.stride, 0, g_dc, &g_in,
                      gf.data() + blk.down_conv.w, nullptr);
    } else {
      for (std::size_t j = 0; j < g_in.v.size(); ++j) g_in.v[j] += g_sum.v[j];
    }
    g_out = std::move(g_in);
  }
  // stem
  Tensor<T> g_act(cache.stem_act.n, cache.stem_act.c, cache.stem_act.h,
                  cache.stem_act.w);
  maxpool_backward(g_out, cache.pool_arg, g_act);
  Tensor<T> g_bn(g_act.n, g_act.c, g_act.h, g_act.w);
  relu_backward(cache.stem_act, g_act, g_bn);
  Tensor<T> g_conv(g_act.n, g_act.c, g_act.h, g_act.w);
  batchnorm_backward(cache.stem_bn, pf.data() + rs.stem_bn.gamma, g_bn, g_conv,
                     gf.data() + rs.stem_bn.gamma, gf.data() + rs.stem_bn.beta);
  conv2d_backward(cache.stem_in, pf.data() + rs.stem.w, rs.stem.cout, rs.stem.k,
                  rs.stem.k, rs.stem.stride, rs.stem.pad, g_conv,
                  static_cast<Tensor<T>*>(nullptr), gf.data() + rs.stem.w, nullptr);
}

}  // namespace detail

/// Backbone feature extractor F.
template <class T>
void extract_features(const ModelDef& def, const std::vector<T>& pf,
                      const std::vector<T>& buffers, BnMode mode, const Tensor<T>& x,
                      NetCache<T>& cache, Tensor<T>& feature) {
  check(x.c == def.backbone.in_channels, "extract_features: channel mismatch");
  check(x.h == def.backbone.image_size && x.w == def.backbone.image_size,
        "extract_features: spatial size does not match config");
  if (def.backbone.arch == Arch::tiny_cnn)
    detail::tiny_forward(def, pf, buffers, mode, x, cache, feature);
  else
    detail::resnet_forward(def, pf, buffers, mode, x, cache, feature);
}

/// Classifier C: global average pool then a single affine map to 2 logits.
template <class T>
void classify(const ModelDef& def, const std::vector<T>& pc, const Tensor<T>& feature,
              std::type_identity_t<Mat<T>>* pooled_cache, Mat<T>& logits) {
  check(feature.c == def.classifier.in, "classify: channel mismatch");
  Mat<T> pooled;
  gap_forward(feature, pooled);
  linear_forward(pooled, pc.data() + def.classifier.w, pc.data() + def.classifier.b,
                 def.classifier.out, logits);
  if (pooled_cache) *pooled_cache = std::move(pooled);
}

/// Whole-network forward. The dynamic weights end up in cache.dyn.weights
/// (empty matrix when the dynamic block is disabled).
template <class T>
void net_forward(const ModelDef& def, const ParamVecs<T>& p,
                 const std::vector<T>& buffers, BnMode mode, const Tensor<T>& x,
                 NetCache<T>& cache) {
  extract_features(def, p.f, buffers, mode, x, cache, cache.feature);
  if (def.dyn_cfg.enabled) {
    Mat<T> weights;
    dyn_forward(def.dyn, p.d.data(), cache.feature, &cache.dyn, cache.head_in,
                weights);
  } else {
    cache.head_in = cache.feature;
    cache.dyn.weights = Mat<T>();
  }
  classify(def, p.c, cache.head_in, &cache.cls_pooled, cache.logits);
}

/// Whole-network backward from logits (and optionally from the dynamic
/// weights, for the IM loss). Accumulates into g.
template <class T>
void net_backward(const ModelDef& def, const ParamVecs<T>& p, const NetCache<T>& cache,
                  const Mat<T>& g_logits, const Mat<T>* g_weights_ext,
                  ParamVecs<T>& g) {
  Mat<T> g_pooled(cache.cls_pooled.rows, cache.cls_pooled.cols);
  linear_backward(cache.cls_pooled, p.c.data() + def.classifier.w, def.classifier.out,
                  g_logits, &g_pooled, g.c.data() + def.classifier.w,
                  g.c.data() + def.classifier.b);
  Tensor<T> g_head(cache.head_in.n, cache.head_in.c, cache.head_in.h, cache.head_in.w);
  gap_backward(g_pooled, g_head);

  Tensor<T> g_feature(cache.feature.n, cache.feature.c, cache.feature.h,
                      cache.feature.w);
  if (def.dyn_cfg.enabled) {
    dyn_backward(def.dyn, p.d.data(), cache.dyn, g_head, g_weights_ext, g_feature,
                 g.d.data());
  } else {
    g_feature = std::move(g_head);
  }
  if (def.backbone.arch == Arch::tiny_cnn)
    detail::tiny_backward(def, p.f, cache, g_feature, g.f);
  else
    detail::resnet_backward(def, p.f, cache, g_feature, g.f);
}

/// Fold the batch statistics of a training forward into the running stats.
template <class T>
void commit_bn_stats(const ModelDef& def, const NetCache<T>& cache,
                     std::vector<T>& buffers, T momentum) {
  const auto fold = [&](const NormSpec& bn, const BnCache<T>& bc) {
    for (int ch = 0; ch < bn.c; ++ch) {
      buffers[bn.rmean + ch] =
          (T(1) - momentum) * buffers[bn.rmean + ch] + momentum * bc.mean[ch];
      buffers[bn.rvar + ch] =
          (T(1) - momentum) * buffers[bn.rvar + ch] + momentum * bc.var[ch];
    }
  };
  if (def.backbone.arch == Arch::tiny_cnn) {
    for (int s = 0; s < 3; ++s) fold(def.tiny.bn[s], cache.tiny[s].bn);
  } else {
    fold(def.resnet.stem_bn, cache.stem_bn);
    for (std::size_t b = 0; b < def.resnet.blocks.size(); ++b) {
      fold(def.resnet.blocks[b].bn1, cache.blocks[b].bn1);
      fold(def.resnet.blocks[b].bn2, cache.blocks[b].bn2);
      if (def.resnet.blocks[b].has_down)
        fold(def.resnet.blocks[b].down_bn, cache.blocks[b].down_bn);
    }
  }
}

}  // namespace sddg
