// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "sddg/dual.hpp"

namespace sddg {

/// Dense rank-4 array in NCHW layout.
template <class T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(std::size_t(n_) * c_ * h_ * w_, T(0)) {}

  std::size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  T* plane(int i, int ch) { return v.data() + (std::size_t(i) * c + ch) * h * w; }
  const T* plane(int i, int ch) const { return v.data() + (std::size_t(i) * c + ch) * h * w; }
  T* sample(int i) { return v.data() + std::size_t(i) * c * h * w; }
  const T* sample(int i) const { return v.data() + std::size_t(i) * c * h * w; }

  T& at(int i, int ch, int y, int x) { return v[((std::size_t(i) * c + ch) * h + y) * w + x]; }
  const T& at(int i, int ch, int y, int x) const {
    return v[((std::size_t(i) * c + ch) * h + y) * w + x];
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

/// Dense row-major matrix.
template <class T>
struct Mat {
  int rows = 0, cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(std::size_t(r) * c, T(0)) {}

  std::size_t size() const { return v.size(); }
  T* row(int r) { return v.data() + std::size_t(r) * cols; }
  const T* row(int r) const { return v.data() + std::size_t(r) * cols; }
  T& at(int r, int c) { return v[std::size_t(r) * cols + c]; }
  const T& at(int r, int c) const { return v[std::size_t(r) * cols + c]; }
  void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

template <class Src, class Dst>
void convert(const Tensor<Src>& a, Tensor<Dst>& out) {
  out.n = a.n; out.c = a.c; out.h = a.h; out.w = a.w;
  out.v.resize(a.v.size());
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = Dst(a.v[i]);
}

// C = op(A) * op(B) + beta * C, row-major, contiguous leading dimensions.
// op(A) is m x k, op(B) is k x n. Implemented with Eigen in gemm.cpp.
void gemm_f32(bool ta, bool tb, int m, int n, int k, const float* A, const float* B,
              float beta, float* C);
void gemm_f64(bool ta, bool tb, int m, int n, int k, const double* A, const double* B,
              double beta, double* C);

template <class T>
void gemm(bool ta, bool tb, int m, int n, int k, const T* A, const T* B, T beta, T* C) {
  if constexpr (std::is_same_v<T, float>) {
    gemm_f32(ta, tb, m, n, k, A, B, beta, C);
  } else if constexpr (std::is_same_v<T, double>) {
    gemm_f64(ta, tb, m, n, k, A, B, beta, C);
  } else if constexpr (is_dual_v<T>) {
    // (Av + e At)(Bv + e Bt) = Av Bv + e (Av Bt + At Bv): three real products.
    using R = real_of_t<T>;
    const std::size_t an = std::size_t(m) * k, bn = std::size_t(k) * n,
                      cn = std::size_t(m) * n;
    std::vector<R> av(an), at(an), bv(bn), bt(bn), cv(cn, R(0)), ct(cn, R(0));
    for (std::size_t i = 0; i < an; ++i) { av[i] = A[i].v; at[i] = A[i].t; }
    for (std::size_t i = 0; i < bn; ++i) { bv[i] = B[i].v; bt[i] = B[i].t; }
    gemm<R>(ta, tb, m, n, k, av.data(), bv.data(), R(0), cv.data());
    gemm<R>(ta, tb, m, n, k, av.data(), bt.data(), R(0), ct.data());
    gemm<R>(ta, tb, m, n, k, at.data(), bv.data(), R(1), ct.data());
    if (beta.v == R(0) && beta.t == R(0)) {
      for (std::size_t i = 0; i < cn; ++i) C[i] = T{cv[i], ct[i]};
    } else {
      for (std::size_t i = 0; i < cn; ++i) C[i] = beta * C[i] + T{cv[i], ct[i]};
    }
  } else {
    static_assert(sizeof(T) == 0, "unsupported gemm scalar");
  }
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T dot(std::size_t n, const T* a, const T* b) {
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace sddg
