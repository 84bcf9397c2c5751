// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "sddg/dynamic_block.hpp"
#include "sddg/ops.hpp"
#include "test_util.hpp"

using namespace sddg;
using namespace sddg::test;

namespace {

/// Nested-loop convolution, the oracle the GEMM path is checked against.
template <class T>
Tensor<T> conv_naive(const Tensor<T>& x, const T* w, const T* b, int cout, int k,
                     int stride, int pad) {
  const int oh = conv_out_dim(x.h, k, stride, pad);
  const int ow = conv_out_dim(x.w, k, stride, pad);
  Tensor<T> y(x.n, cout, oh, ow);
  for (int i = 0; i < x.n; ++i)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = b ? b[co] : T(0);
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += w[((std::size_t(co) * x.c + ci) * k + ky) * k + kx] *
                       x.at(i, ci, iy, ix);
              }
          y.at(i, co, oy, ox) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("gemm matches a simple triple loop") {
  Rng rng(7);
  const int m = 5, n = 4, k = 3;
  std::vector<double> a(m * k), b(k * n), c(m * n, 0.0), ref(m * n, 0.0);
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  gemm<double>(false, false, m, n, k, a.data(), b.data(), 0.0, c.data());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l) ref[i * n + j] += a[i * k + l] * b[l * n + j];
  for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  // transposed variants against the same reference
  std::vector<double> at(k * m), bt(n * k), c2(m * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) at[l * m + i] = a[i * k + l];
  for (int l = 0; l < k; ++l)
    for (int j = 0; j < n; ++j) bt[j * k + l] = b[l * n + j];
  gemm<double>(true, true, m, n, k, at.data(), bt.data(), 0.0, c2.data());
  for (int i = 0; i < m * n; ++i) CHECK(c2[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("dual gemm carries exact tangents") {
  Rng rng(11);
  const int m = 3, n = 3, k = 4;
  using D = Dual<double>;
  std::vector<D> a(m * k), b(k * n), c(m * n, D(0.0));
  for (auto& x : a) x = D(rng.uniform(-1, 1), rng.uniform(-1, 1));
  for (auto& x : b) x = D(rng.uniform(-1, 1), rng.uniform(-1, 1));
  gemm<D>(false, false, m, n, k, a.data(), b.data(), D(0.0), c.data());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double v = 0, t = 0;
      for (int l = 0; l < k; ++l) {
        v += a[i * k + l].v * b[l * n + j].v;
        t += a[i * k + l].v * b[l * n + j].t + a[i * k + l].t * b[l * n + j].v;
      }
      CHECK(c[i * n + j].v == doctest::Approx(v).epsilon(1e-12));
      CHECK(c[i * n + j].t == doctest::Approx(t).epsilon(1e-12));
    }
}

TEST_CASE("conv2d forward matches the nested-loop oracle") {
  Rng rng(3);
  for (const auto& [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 3, 7}, {2, 0, 1}}) {
    const int cin = 3, cout = 4;
    auto x = random_tensor<double>(2, cin, 9, 9, rng);
    std::vector<double> w(std::size_t(cout) * cin * k * k), b(cout);
    fill_uniform(w, rng);
    fill_uniform(b, rng);
    Tensor<double> y;
    conv2d_forward(x, w.data(), b.data(), cout, k, k, stride, pad, y);
    const Tensor<double> ref = conv_naive(x, w.data(), b.data(), cout, k, stride, pad);
    REQUIRE(y.same_shape(ref));
    for (std::size_t i = 0; i < y.v.size(); ++i)
      CHECK(y.v[i] == doctest::Approx(ref.v[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d backward matches finite differences") {
  Rng rng(5);
  const int cin = 2, cout = 3, k = 3, stride = 1, pad = 1, s = 5;
  auto x = random_tensor<double>(2, cin, s, s, rng);
  std::vector<double> w(std::size_t(cout) * cin * k * k), b(cout);
  fill_uniform(w, rng);
  fill_uniform(b, rng);
  // scalar objective: weighted sum of outputs
  Tensor<double> y0;
  conv2d_forward(x, w.data(), b.data(), cout, k, k, stride, pad, y0);
  auto seed_t = random_tensor<double>(y0.n, y0.c, y0.h, y0.w, rng);
  const auto objective = [&]() {
    Tensor<double> y;
    conv2d_forward(x, w.data(), b.data(), cout, k, k, stride, pad, y);
    return dot(y.v.size(), y.v.data(), seed_t.v.data());
  };

  Tensor<double> gx(x.n, x.c, x.h, x.w);
  std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
  conv2d_backward(x, w.data(), cout, k, k, stride, pad, seed_t, &gx, gw.data(),
                  gb.data());

  CHECK(rel_l2(gw, fd_gradient(w, objective)) < 1e-7);
  CHECK(rel_l2(gb, fd_gradient(b, objective)) < 1e-7);
  std::vector<double> gx_flat(gx.v.begin(), gx.v.end());
  CHECK(rel_l2(gx_flat, fd_gradient(x.v, objective)) < 1e-7);
}

TEST_CASE("batchnorm train-mode backward matches finite differences") {
  Rng rng(9);
  const int c = 3;
  auto x = random_tensor<double>(4, c, 3, 3, rng);
  std::vector<double> gamma(c), beta(c), rm(c, 0.0), rv(c, 1.0);
  fill_uniform(gamma, rng, 0.5, 1.5);
  fill_uniform(beta, rng);
  auto seed_t = random_tensor<double>(4, c, 3, 3, rng);
  const auto objective = [&]() {
    BnCache<double> cache;
    Tensor<double> y;
    batchnorm_forward(x, gamma.data(), beta.data(), 1e-5, true, rm.data(), rv.data(),
                      &cache, y);
    return dot(y.v.size(), y.v.data(), seed_t.v.data());
  };
  BnCache<double> cache;
  Tensor<double> y;
  batchnorm_forward(x, gamma.data(), beta.data(), 1e-5, true, rm.data(), rv.data(),
                    &cache, y);
  Tensor<double> gx(4, c, 3, 3);
  std::vector<double> gg(c, 0.0), gb(c, 0.0);
  batchnorm_backward(cache, gamma.data(), seed_t, gx, gg.data(), gb.data());
  std::vector<double> gx_flat(gx.v.begin(), gx.v.end());
  CHECK(rel_l2(gx_flat, fd_gradient(x.v, objective)) < 1e-6);
  CHECK(rel_l2(gg, fd_gradient(gamma, objective)) < 1e-6);
  CHECK(rel_l2(gb, fd_gradient(beta, objective)) < 1e-6);
}

TEST_CASE("instance norm backward matches finite differences") {
  Rng rng(13);
  const int c = 2;
  auto x = random_tensor<double>(3, c, 4, 4, rng);
  std::vector<double> gamma(c), beta(c);
  fill_uniform(gamma, rng, 0.5, 1.5);
  fill_uniform(beta, rng);
  auto seed_t = random_tensor<double>(3, c, 4, 4, rng);
  const auto objective = [&]() {
    InCache<double> cache;
    Tensor<double> y;
    instnorm_forward(x, 1e-5, gamma.data(), beta.data(), &cache, y);
    return dot(y.v.size(), y.v.data(), seed_t.v.data());
  };
  InCache<double> cache;
  Tensor<double> y;
  instnorm_forward(x, 1e-5, gamma.data(), beta.data(), &cache, y);
  Tensor<double> gx(3, c, 4, 4);
  std::vector<double> gg(c, 0.0), gb(c, 0.0);
  instnorm_backward(cache, gamma.data(), seed_t, gx, gg.data(), gb.data());
  std::vector<double> gx_flat(gx.v.begin(), gx.v.end());
  CHECK(rel_l2(gx_flat, fd_gradient(x.v, objective)) < 1e-6);
  CHECK(rel_l2(gg, fd_gradient(gamma, objective)) < 1e-6);
  CHECK(rel_l2(gb, fd_gradient(beta, objective)) < 1e-6);
}

TEST_CASE("pool and linear backwards match finite differences") {
  Rng rng(17);
  auto x = random_tensor<double>(2, 2, 6, 6, rng);

  SUBCASE("avgpool2") {
    auto seed_t = random_tensor<double>(2, 2, 3, 3, rng);
    const auto objective = [&]() {
      Tensor<double> y;
      avgpool2_forward(x, y);
      return dot(y.v.size(), y.v.data(), seed_t.v.data());
    };
    Tensor<double> gx(2, 2, 6, 6);
    avgpool2_backward(seed_t, gx);
    std::vector<double> gx_flat(gx.v.begin(), gx.v.end());
    CHECK(rel_l2(gx_flat, fd_gradient(x.v, objective)) < 1e-8);
  }

  SUBCASE("maxpool 3x3 s2 p1") {
    Tensor<double> y;
    std::vector<int> argmax;
    maxpool_forward(x, 3, 2, 1, y, argmax);
    auto seed_t = random_tensor<double>(y.n, y.c, y.h, y.w, rng);
    const auto objective = [&]() {
      Tensor<double> yy;
      std::vector<int> am;
      maxpool_forward(x, 3, 2, 1, yy, am);
      return dot(yy.v.size(), yy.v.data(), seed_t.v.data());
    };
    Tensor<double> gx(2, 2, 6, 6);
    maxpool_backward(seed_t, argmax, gx);
    std::vector<double> gx_flat(gx.v.begin(), gx.v.end());
    CHECK(rel_l2(gx_flat, fd_gradient(x.v, objective, 1e-6)) < 1e-6);
  }

  SUBCASE("gap + linear") {
    std::vector<double> w(3 * 2), b(3);
    fill_uniform(w, rng);
    fill_uniform(b, rng);
    auto seed_m = random_mat<double>(2, 3, rng);
    const auto objective = [&]() {
      Mat<double> pooled, out;
      gap_forward(x, pooled);
      linear_forward(pooled, w.data(), b.data(), 3, out);
      return dot(out.v.size(), out.v.data(), seed_m.v.data());
    };
    Mat<double> pooled;
    gap_forward(x, pooled);
    Mat<double> gpool(2, 2);
    std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
    linear_backward(pooled, w.data(), 3, seed_m, &gpool, gw.data(), gb.data());
    Tensor<double> gx(2, 2, 6, 6);
    gap_backward(gpool, gx);
    std::vector<double> gx_flat(gx.v.begin(), gx.v.end());
    CHECK(rel_l2(gw, fd_gradient(w, objective)) < 1e-8);
    CHECK(rel_l2(gb, fd_gradient(b, objective)) < 1e-8);
    CHECK(rel_l2(gx_flat, fd_gradient(x.v, objective)) < 1e-7);
  }
}

TEST_CASE("instance norm spec cases") {
  SUBCASE("constant channel maps to zero before affine") {
    Tensor<double> x(1, 1, 2, 2);
    x.fill(5.0);
    Tensor<double> y;
    instance_normalize(x, 1e-5, y);
    for (double v : y.v) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("channel [1,2,3,4] normalizes to mean 0 var 1") {
    Tensor<double> x(1, 1, 2, 2);
    x.v = {1, 2, 3, 4};
    Tensor<double> y;
    instance_normalize(x, 1e-8, y);
    double mean = 0, var = 0;
    for (double v : y.v) mean += v / 4;
    for (double v : y.v) var += (v - mean) * (v - mean) / 4;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("random map moments within 1e-4 at eps 1e-5") {
    Rng rng(23);
    auto x = random_tensor<double>(2, 3, 8, 8, rng);
    Tensor<double> y;
    instance_normalize(x, 1e-5, y);
    for (int i = 0; i < 2; ++i)
      for (int c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        const double* p = y.plane(i, c);
        for (int j = 0; j < 64; ++j) mean += p[j] / 64;
        for (int j = 0; j < 64; ++j) var += (p[j] - mean) * (p[j] - mean) / 64;
        CHECK(std::abs(mean) < 1e-4);
        CHECK(std::abs(var - 1.0) < 1e-4);
      }
  }
}
