// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

#include "sddg/tensor.hpp"

namespace sddg {

// Gradient outputs of every backward routine ACCUMULATE into their buffers;
// callers zero-initialize. Parameters may be reached by several paths (shared
// input tensors, branch fusion), so += is the only composable convention.

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <class T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, T* cols) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = cols + ((std::size_t(ch) * kh + ky) * kw + kx) * oh * ow;
        const T* src = x + std::size_t(ch) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) *dst++ = T(0);
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            *dst++ = (ix >= 0 && ix < w) ? src[iy * w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_accum(const T* cols, int c, int h, int w, int kh, int kw, int stride,
                  int pad, int oh, int ow, T* gx) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = cols + ((std::size_t(ch) * kh + ky) * kw + kx) * oh * ow;
        T* dst = gx + std::size_t(ch) * h * w;
        for (int oy = 0; oy < oh; ++oy, src += ow) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[iy * w + ix] += src[ox];
          }
        }
      }
    }
  }
}

/// weights laid out [cout][cin][kh][kw], bias [cout] (nullptr for bias-free).
template <class T>
void conv2d_forward(const Tensor<T>& x, const T* weights,
                    const std::type_identity_t<T>* bias, int cout, int kh, int kw,
                    int stride, int pad, Tensor<T>& y) {
  const int oh = conv_out_dim(x.h, kh, stride, pad);
  const int ow = conv_out_dim(x.w, kw, stride, pad);
  check(oh >= 1 && ow >= 1, "conv2d: output would be empty");
  y = Tensor<T>(x.n, cout, oh, ow);
  const int krows = x.c * kh * kw;
  std::vector<T> cols(std::size_t(krows) * oh * ow);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), x.c, x.h, x.w, kh, kw, stride, pad, oh, ow, cols.data());
    gemm<T>(false, false, cout, oh * ow, krows, weights, cols.data(), T(0), y.sample(i));
    if (bias) {
      for (int co = 0; co < cout; ++co) {
        T* p = y.plane(i, co);
        for (int j = 0; j < oh * ow; ++j) p[j] += bias[co];
      }
    }
  }
}

template <class T>
void conv2d_backward(const Tensor<T>& x, const T* weights, int cout, int kh, int kw,
                     int stride, int pad, const Tensor<T>& gy,
                     std::type_identity_t<Tensor<T>>* gx,
                     std::type_identity_t<T>* gweights, std::type_identity_t<T>* gbias) {
  const int oh = gy.h, ow = gy.w;
  const int krows = x.c * kh * kw;
  std::vector<T> cols(std::size_t(krows) * oh * ow);
  std::vector<T> gcols(gx ? cols.size() : 0);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), x.c, x.h, x.w, kh, kw, stride, pad, oh, ow, cols.data());
    // gW += gy_i * cols^T
    gemm<T>(false, true, cout, krows, oh * ow, gy.sample(i), cols.data(), T(1), gweights);
    if (gbias) {
      for (int co = 0; co < cout; ++co) {
        const T* p = gy.plane(i, co);
        T s(0);
        for (int j = 0; j < oh * ow; ++j) s += p[j];
        gbias[co] += s;
      }
    }
    if (gx) {
      gemm<T>(true, false, krows, oh * ow, cout, weights, gy.sample(i), T(0), gcols.data());
      col2im_accum(gcols.data(), x.c, x.h, x.w, kh, kw, stride, pad, oh, ow, gx->sample(i));
    }
  }
}

template <class T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  y = x;
  for (auto& e : y.v)
    if (e < T(0)) e = T(0);
}

template <class T>
void relu_backward(const Tensor<T>& y, const Tensor<T>& gy, Tensor<T>& gx) {
  for (std::size_t i = 0; i < y.v.size(); ++i)
    if (y.v[i] > T(0)) gx.v[i] += gy.v[i];
}

template <class T>
struct BnCache {
  Tensor<T> xhat;
  std::vector<T> invstd;       // per channel
  std::vector<T> mean, var;    // batch stats, kept for the running-stat commit
};

/// Train mode normalizes with batch statistics over (N, H, W) and fills the
/// cache; eval mode uses the provided running stats and needs no cache.
template <class T>
void batchnorm_forward(const Tensor<T>& x, const T* gamma, const T* beta, T eps,
                       bool train, const T* run_mean, const T* run_var,
                       std::type_identity_t<BnCache<T>>* cache, Tensor<T>& y) {
  y = Tensor<T>(x.n, x.c, x.h, x.w);
  const int m = x.n * x.h * x.w;
  const int hw = x.h * x.w;
  if (!train) {
    for (int ch = 0; ch < x.c; ++ch) {
      using std::sqrt;
      const T inv = T(1) / sqrt(run_var[ch] + eps);
      for (int i = 0; i < x.n; ++i) {
        const T* px = x.plane(i, ch);
        T* py = y.plane(i, ch);
        for (int j = 0; j < hw; ++j) py[j] = gamma[ch] * ((px[j] - run_mean[ch]) * inv) + beta[ch];
      }
    }
    return;
  }
  cache->xhat = Tensor<T>(x.n, x.c, x.h, x.w);
  cache->invstd.assign(x.c, T(0));
  cache->mean.assign(x.c, T(0));
  cache->var.assign(x.c, T(0));
  for (int ch = 0; ch < x.c; ++ch) {
    T sum(0);
    for (int i = 0; i < x.n; ++i) {
      const T* px = x.plane(i, ch);
      for (int j = 0; j < hw; ++j) sum += px[j];
    }
    const T mean = sum / T(m);
    T sq(0);
    for (int i = 0; i < x.n; ++i) {
      const T* px = x.plane(i, ch);
      for (int j = 0; j < hw; ++j) {
        const T d = px[j] - mean;
        sq += d * d;
      }
    }
    const T var = sq / T(m);
    using std::sqrt;
    const T inv = T(1) / sqrt(var + eps);
    cache->mean[ch] = mean;
    cache->var[ch] = var;
    cache->invstd[ch] = inv;
    for (int i = 0; i < x.n; ++i) {
      const T* px = x.plane(i, ch);
      T* ph = cache->xhat.plane(i, ch);
      T* py = y.plane(i, ch);
      for (int j = 0; j < hw; ++j) {
        ph[j] = (px[j] - mean) * inv;
        py[j] = gamma[ch] * ph[j] + beta[ch];
      }
    }
  }
}

template <class T>
void batchnorm_backward(const BnCache<T>& cache, const T* gamma, const Tensor<T>& gy,
                        Tensor<T>& gx, T* ggamma, T* gbeta) {
  const auto& xhat = cache.xhat;
  const int m = xhat.n * xhat.h * xhat.w;
  const int hw = xhat.h * xhat.w;
  for (int ch = 0; ch < xhat.c; ++ch) {
    T sum_gy(0), sum_gy_xhat(0);
    for (int i = 0; i < xhat.n; ++i) {
      const T* pg = gy.plane(i, ch);
      const T* ph = xhat.plane(i, ch);
      for (int j = 0; j < hw; ++j) {
        sum_gy += pg[j];
        sum_gy_xhat += pg[j] * ph[j];
      }
    }
    ggamma[ch] += sum_gy_xhat;
    gbeta[ch] += sum_gy;
    const T k1 = sum_gy / T(m);
    const T k2 = sum_gy_xhat / T(m);
    const T scale = gamma[ch] * cache.invstd[ch];
    for (int i = 0; i < xhat.n; ++i) {
      const T* pg = gy.plane(i, ch);
      const T* ph = xhat.plane(i, ch);
      T* px = gx.plane(i, ch);
      for (int j = 0; j < hw; ++j) px[j] += scale * (pg[j] - k1 - ph[j] * k2);
    }
  }
}

template <class T>
struct InCache {
  Tensor<T> xhat;
  Mat<T> invstd;  // n x c
};

/// Per-(sample, channel) normalization over the spatial plane. gamma/beta are
/// optional per-channel affine terms.
template <class T>
void instnorm_forward(const Tensor<T>& x, T eps, const std::type_identity_t<T>* gamma,
                      const std::type_identity_t<T>* beta,
                      std::type_identity_t<InCache<T>>* cache, Tensor<T>& y) {
  check(value_of(eps) > 0, "instance_normalize: eps must be > 0");
  y = Tensor<T>(x.n, x.c, x.h, x.w);
  if (cache) {
    cache->xhat = Tensor<T>(x.n, x.c, x.h, x.w);
    cache->invstd = Mat<T>(x.n, x.c);
  }
  const int hw = x.h * x.w;
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const T* px = x.plane(i, ch);
      T sum(0);
      for (int j = 0; j < hw; ++j) sum += px[j];
      const T mean = sum / T(hw);
      T sq(0);
      for (int j = 0; j < hw; ++j) {
        const T d = px[j] - mean;
        sq += d * d;
      }
      using std::sqrt;
      const T inv = T(1) / sqrt(sq / T(hw) + eps);
      if (cache) cache->invstd.at(i, ch) = inv;
      T* py = y.plane(i, ch);
      T* ph = cache ? cache->xhat.plane(i, ch) : nullptr;
      const T g = gamma ? gamma[ch] : T(1);
      const T b = beta ? beta[ch] : T(0);
      for (int j = 0; j < hw; ++j) {
        const T xh = (px[j] - mean) * inv;
        if (ph) ph[j] = xh;
        py[j] = g * xh + b;
      }
    }
  }
}

template <class T>
void instnorm_backward(const InCache<T>& cache, const std::type_identity_t<T>* gamma,
                       const Tensor<T>& gy, Tensor<T>& gx,
                       std::type_identity_t<T>* ggamma, std::type_identity_t<T>* gbeta) {
  const auto& xhat = cache.xhat;
  const int hw = xhat.h * xhat.w;
  for (int i = 0; i < xhat.n; ++i) {
    for (int ch = 0; ch < xhat.c; ++ch) {
      const T* pg = gy.plane(i, ch);
      const T* ph = xhat.plane(i, ch);
      T sum_gy(0), sum_gy_xhat(0);
      for (int j = 0; j < hw; ++j) {
        sum_gy += pg[j];
        sum_gy_xhat += pg[j] * ph[j];
      }
      if (ggamma) ggamma[ch] += sum_gy_xhat;
      if (gbeta) gbeta[ch] += sum_gy;
      const T g = gamma ? gamma[ch] : T(1);
      const T k1 = sum_gy / T(hw);
      const T k2 = sum_gy_xhat / T(hw);
      const T scale = g * cache.invstd.at(i, ch);
      T* px = gx.plane(i, ch);
      for (int j = 0; j < hw; ++j) px[j] += scale * (pg[j] - k1 - ph[j] * k2);
    }
  }
}

template <class T>
void avgpool2_forward(const Tensor<T>& x, Tensor<T>& y) {
  check(x.h % 2 == 0 && x.w % 2 == 0, "avgpool2: odd spatial size");
  y = Tensor<T>(x.n, x.c, x.h / 2, x.w / 2);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* px = x.plane(i, ch);
      T* py = y.plane(i, ch);
      for (int oy = 0; oy < y.h; ++oy)
        for (int ox = 0; ox < y.w; ++ox) {
          const T* p = px + 2 * oy * x.w + 2 * ox;
          py[oy * y.w + ox] = (p[0] + p[1] + p[x.w] + p[x.w + 1]) * T(0.25);
        }
    }
}

template <class T>
void avgpool2_backward(const Tensor<T>& gy, Tensor<T>& gx) {
  for (int i = 0; i < gy.n; ++i)
    for (int ch = 0; ch < gy.c; ++ch) {
      const T* pg = gy.plane(i, ch);
      T* px = gx.plane(i, ch);
      for (int oy = 0; oy < gy.h; ++oy)
        for (int ox = 0; ox < gy.w; ++ox) {
          const T g = pg[oy * gy.w + ox] * T(0.25);
          T* p = px + 2 * oy * gx.w + 2 * ox;
          p[0] += g;
          p[1] += g;
          p[gx.w] += g;
          p[gx.w + 1] += g;
        }
    }
}

template <class T>
void maxpool_forward(const Tensor<T>& x, int k, int stride, int pad, Tensor<T>& y,
                     std::vector<int>& argmax) {
  const int oh = conv_out_dim(x.h, k, stride, pad);
  const int ow = conv_out_dim(x.w, k, stride, pad);
  y = Tensor<T>(x.n, x.c, oh, ow);
  argmax.assign(y.size(), -1);
  std::size_t o = 0;
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* px = x.plane(i, ch);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          T best{};
          int best_idx = -1;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= x.w) continue;
              const int idx = iy * x.w + ix;
              if (best_idx < 0 || px[idx] > best) {
                best = px[idx];
                best_idx = idx;
              }
            }
          }
          y.v[o] = best;
          argmax[o] = best_idx;
        }
    }
}

template <class T>
void maxpool_backward(const Tensor<T>& gy, const std::vector<int>& argmax,
                      Tensor<T>& gx) {
  std::size_t o = 0;
  for (int i = 0; i < gy.n; ++i)
    for (int ch = 0; ch < gy.c; ++ch) {
      T* px = gx.plane(i, ch);
      for (int j = 0; j < gy.h * gy.w; ++j, ++o) px[argmax[o]] += gy.v[o];
    }
}

/// Global average pool: NCHW -> N x C.
template <class T>
void gap_forward(const Tensor<T>& x, Mat<T>& y) {
  y = Mat<T>(x.n, x.c);
  const int hw = x.h * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* p = x.plane(i, ch);
      T s(0);
      for (int j = 0; j < hw; ++j) s += p[j];
      y.at(i, ch) = s / T(hw);
    }
}

template <class T>
void gap_backward(const Mat<T>& gy, Tensor<T>& gx) {
  const int hw = gx.h * gx.w;
  for (int i = 0; i < gx.n; ++i)
    for (int ch = 0; ch < gx.c; ++ch) {
      const T g = gy.at(i, ch) / T(hw);
      T* p = gx.plane(i, ch);
      for (int j = 0; j < hw; ++j) p[j] += g;
    }
}

/// y = x * W^T + b with W laid out [out][in].
template <class T>
void linear_forward(const Mat<T>& x, const T* weights,
                    const std::type_identity_t<T>* bias, int out, Mat<T>& y) {
  y = Mat<T>(x.rows, out);
  gemm<T>(false, true, x.rows, out, x.cols, x.v.data(), weights, T(0), y.v.data());
  if (bias)
    for (int i = 0; i < y.rows; ++i)
      for (int j = 0; j < out; ++j) y.at(i, j) += bias[j];
}

template <class T>
void linear_backward(const Mat<T>& x, const T* weights, int out, const Mat<T>& gy,
                     std::type_identity_t<Mat<T>>* gx, std::type_identity_t<T>* gweights,
                     std::type_identity_t<T>* gbias) {
  gemm<T>(true, false, out, x.cols, x.rows, gy.v.data(), x.v.data(), T(1), gweights);
  if (gbias)
    for (int i = 0; i < gy.rows; ++i)
      for (int j = 0; j < out; ++j) gbias[j] += gy.at(i, j);
  if (gx)
    gemm<T>(false, false, x.rows, x.cols, out, gy.v.data(), weights, T(1), gx->v.data());
}

template <class T>
void softmax_rows(const Mat<T>& logits, Mat<T>& probs) {
  probs = Mat<T>(logits.rows, logits.cols);
  using std::exp;
  for (int i = 0; i < logits.rows; ++i) {
    const T* l = logits.row(i);
    T m = l[0];
    for (int j = 1; j < logits.cols; ++j)
      if (l[j] > m) m = l[j];
    T z(0);
    T* p = probs.row(i);
    for (int j = 0; j < logits.cols; ++j) {
      p[j] = exp(l[j] - m);
      z += p[j];
    }
    for (int j = 0; j < logits.cols; ++j) p[j] = p[j] / z;
  }
}

}  // namespace sddg
