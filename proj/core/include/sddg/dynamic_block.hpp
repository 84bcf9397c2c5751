// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <type_traits>
#include <vector>

#include "sddg/ops.hpp"
#include "sddg/tensor.hpp"

namespace sddg {

/// Offsets below index into the dynamic-block parameter vector (theta_D).
struct DynConvSpec {
  int cin = 0, cout = 0;
  bool bias = false;
  std::size_t w = 0, b = 0;
};

struct DynLinSpec {
  int in = 0, out = 0;
  std::size_t w = 0, b = 0;
};

/// Two-branch dynamic block: an instance-normalized invariant branch and a
/// mixture of k specific convolutions gated per sample by the adaptor
/// (pool - fc - relu - fc - softmax). Fusion is an element-wise sum.
struct DynBlockSpec {
  int channels = 0;
  int k = 0;
  int hidden = 0;  // adaptor bottleneck = channels / reduction
  double in_eps = 1e-5;
  bool in_affine = false;
  DynConvSpec inv_conv;                // 3x3, stride 1, pad 1, with bias
  std::size_t in_gamma = 0, in_beta = 0;
  std::vector<DynConvSpec> spec_convs;  // 3x3, bias-free
  DynLinSpec fc1, fc2;
};

template <class T>
struct DynCache {
  Tensor<T> in;
  InCache<T> in_cache;
  Tensor<T> inv_act;                  // F_inv = relu(IN(conv(F)))
  Mat<T> pooled;                      // adaptor input, N x C
  Mat<T> fc1_act;                     // relu(fc1(pooled))
  Mat<T> weights;                     // W, N x K
  std::vector<Tensor<T>> spec_outs;   // conv_k(F) per k
};

/// Output mean/variance per (sample, channel) are (0, 1) up to eps; the
/// optional per-channel affine is applied afterwards.
template <class T>
void instance_normalize(const Tensor<T>& f, T eps, Tensor<T>& out) {
  instnorm_forward<T>(f, eps, nullptr, nullptr, nullptr, out);
}

template <class T>
void dyn_invariant_branch(const DynBlockSpec& spec, const T* theta_d,
                          const Tensor<T>& f, std::type_identity_t<InCache<T>>* cache,
                          Tensor<T>& out) {
  check(f.c == spec.channels, "invariant_branch: channel mismatch");
  Tensor<T> conv_out;
  conv2d_forward(f, theta_d + spec.inv_conv.w, theta_d + spec.inv_conv.b,
                 spec.channels, 3, 3, 1, 1, conv_out);
  Tensor<T> normed;
  instnorm_forward(conv_out, T(spec.in_eps),
                   spec.in_affine ? theta_d + spec.in_gamma : nullptr,
                   spec.in_affine ? theta_d + spec.in_beta : nullptr, cache, normed);
  relu_forward(normed, out);
}

template <class T>
void dyn_adaptor_weights(const DynBlockSpec& spec, const T* theta_d,
                         const Tensor<T>& f, std::type_identity_t<DynCache<T>>* cache,
                         Mat<T>& weights) {
  check(f.c == spec.channels, "adaptor_weights: channel mismatch");
  Mat<T> pooled;
  gap_forward(f, pooled);
  Mat<T> z1;
  linear_forward(pooled, theta_d + spec.fc1.w, theta_d + spec.fc1.b, spec.hidden, z1);
  for (auto& e : z1.v)
    if (e < T(0)) e = T(0);
  Mat<T> z2;
  linear_forward(z1, theta_d + spec.fc2.w, theta_d + spec.fc2.b, spec.k, z2);
  softmax_rows(z2, weights);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->fc1_act = std::move(z1);
  }
}

/// F_spec_i = sum_k w_ik * conv_k(F_i). Mixing happens on the convolution
/// outputs, which keeps the per-sample weighting explicit.
template <class T>
void dyn_specific_branch(const DynBlockSpec& spec, const T* theta_d,
                         const Tensor<T>& f, const Mat<T>& weights,
                         std::type_identity_t<std::vector<Tensor<T>>>* spec_outs,
                         Tensor<T>& out) {
  check(weights.rows == f.n, "specific_branch: weight rows do not match batch");
  check(weights.cols == spec.k, "specific_branch: K mismatch");
  out = Tensor<T>(f.n, spec.channels, f.h, f.w);
  const std::size_t plane = std::size_t(spec.channels) * f.h * f.w;
  for (int k = 0; k < spec.k; ++k) {
    Tensor<T> yk;
    conv2d_forward(f, theta_d + spec.spec_convs[k].w, nullptr, spec.channels, 3, 3, 1,
                   1, yk);
    for (int i = 0; i < f.n; ++i) {
      const T wk = weights.at(i, k);
      const T* src = yk.sample(i);
      T* dst = out.sample(i);
      for (std::size_t j = 0; j < plane; ++j) dst[j] += wk * src[j];
    }
    if (spec_outs) spec_outs->push_back(std::move(yk));
  }
}

/// Full block: returns F_inv + F_spec and the dynamic weights.
template <class T>
void dyn_forward(const DynBlockSpec& spec, const T* theta_d, const Tensor<T>& f,
                 std::type_identity_t<DynCache<T>>* cache, Tensor<T>& out,
                 Mat<T>& weights) {
  Tensor<T> inv;
  dyn_invariant_branch(spec, theta_d, f, cache ? &cache->in_cache : nullptr, inv);
  dyn_adaptor_weights(spec, theta_d, f, cache, weights);
  dyn_specific_branch(spec, theta_d, f, weights, cache ? &cache->spec_outs : nullptr,
                      out);
  for (std::size_t j = 0; j < out.v.size(); ++j) out.v[j] += inv.v[j];
  if (cache) {
    cache->in = f;
    cache->inv_act = std::move(inv);
    cache->weights = weights;
  }
}

/// Backward through the block. g_weights_ext carries an external gradient on
/// the dynamic weights (the IM loss); pass nullptr when there is none.
template <class T>
void dyn_backward(const DynBlockSpec& spec, const T* theta_d, const DynCache<T>& cache,
                  const Tensor<T>& g_out, const Mat<T>* g_weights_ext, Tensor<T>& g_in,
                  T* g_theta_d) {
  const Tensor<T>& f = cache.in;
  const int n = f.n;
  const std::size_t plane = std::size_t(spec.channels) * f.h * f.w;

  // invariant branch
  {
    Tensor<T> g_norm(f.n, f.c, f.h, f.w);
    relu_backward(cache.inv_act, g_out, g_norm);
    Tensor<T> g_conv(f.n, f.c, f.h, f.w);
    instnorm_backward(cache.in_cache,
                      spec.in_affine ? theta_d + spec.in_gamma : nullptr, g_norm,
                      g_conv, spec.in_affine ? g_theta_d + spec.in_gamma : nullptr,
                      spec.in_affine ? g_theta_d + spec.in_beta : nullptr);
    conv2d_backward(f, theta_d + spec.inv_conv.w, spec.channels, 3, 3, 1, 1, g_conv,
                    &g_in, g_theta_d + spec.inv_conv.w, g_theta_d + spec.inv_conv.b);
  }

  // specific branch: d/dy_k and d/dW of sum_k w_ik * y_k
  Mat<T> g_weights(n, spec.k);
  if (g_weights_ext) g_weights = *g_weights_ext;
  {
    Tensor<T> g_yk(f.n, f.c, f.h, f.w);
    for (int k = 0; k < spec.k; ++k) {
      const Tensor<T>& yk = cache.spec_outs[k];
      for (int i = 0; i < n; ++i) {
        const T wk = cache.weights.at(i, k);
        const T* go = g_out.sample(i);
        const T* py = yk.sample(i);
        T* gy = g_yk.sample(i);
        T acc(0);
        for (std::size_t j = 0; j < plane; ++j) {
          gy[j] = wk * go[j];
          acc += go[j] * py[j];
        }
        g_weights.at(i, k) += acc;
      }
      conv2d_backward(f, theta_d + spec.spec_convs[k].w, spec.channels, 3, 3, 1, 1,
                      g_yk, &g_in, g_theta_d + spec.spec_convs[k].w, nullptr);
    }
  }

  // adaptor: softmax -> fc2 -> relu -> fc1 -> gap
  Mat<T> g_z2(n, spec.k);
  for (int i = 0; i < n; ++i) {
    T inner(0);
    for (int k = 0; k < spec.k; ++k) inner += g_weights.at(i, k) * cache.weights.at(i, k);
    for (int k = 0; k < spec.k; ++k)
      g_z2.at(i, k) = cache.weights.at(i, k) * (g_weights.at(i, k) - inner);
  }
  Mat<T> g_a(n, spec.hidden);
  linear_backward(cache.fc1_act, theta_d + spec.fc2.w, spec.k, g_z2, &g_a,
                  g_theta_d + spec.fc2.w, g_theta_d + spec.fc2.b);
  for (std::size_t j = 0; j < g_a.v.size(); ++j)
    if (!(cache.fc1_act.v[j] > T(0))) g_a.v[j] = T(0);
  Mat<T> g_pooled(n, spec.channels);
  linear_backward(cache.pooled, theta_d + spec.fc1.w, spec.hidden, g_a, &g_pooled,
                  g_theta_d + spec.fc1.w, g_theta_d + spec.fc1.b);
  gap_backward(g_pooled, g_in);
}

}  // namespace sddg
