// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include "sddg/tensor.hpp"

#include <Eigen/Core>

namespace sddg {
namespace {

template <class T>
void gemm_eigen(bool ta, bool tb, int m, int n, int k, const T* A, const T* B, T beta, T* C) {
  using M = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<M>;
  using Map = Eigen::Map<const M>;
  Map a(A, ta ? k : m, ta ? m : k);
  Map b(B, tb ? n : k, tb ? k : n);
  CMap c(C, m, n);
  const auto assign = [&](const auto& prod) {
    if (beta == T(0))
      c.noalias() = prod;
    else if (beta == T(1))
      c.noalias() += prod;
    else
      c = beta * c + prod;
  };
  if (!ta && !tb)
    assign(a * b);
  else if (ta && !tb)
    assign(a.transpose() * b);
  else if (!ta && tb)
    assign(a * b.transpose());
  else
    assign(a.transpose() * b.transpose());
}

}  // namespace

void gemm_f32(bool ta, bool tb, int m, int n, int k, const float* A, const float* B,
              float beta, float* C) {
  gemm_eigen(ta, tb, m, n, k, A, B, beta, C);
}

void gemm_f64(bool ta, bool tb, int m, int n, int k, const double* A, const double* B,
              double beta, double* C) {
  gemm_eigen(ta, tb, m, n, k, A, B, beta, C);
}

}  // namespace sddg
