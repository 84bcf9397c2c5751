// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <type_traits>

namespace sddg {

/// First-order dual number: carries a value and one directional derivative.
/// Running the ordinary forward+backward network code on Dual<T> yields the
/// exact directional derivative of every computed gradient, which is how
/// Hessian-vector products are obtained without a second reverse pass.
template <class T>
struct Dual {
  T v{};  // value
  T t{};  // tangent

  constexpr Dual() = default;
  constexpr Dual(T value) : v(value), t(0) {}
  constexpr Dual(T value, T tangent) : v(value), t(tangent) {}

  constexpr Dual& operator+=(const Dual& o) { v += o.v; t += o.t; return *this; }
  constexpr Dual& operator-=(const Dual& o) { v -= o.v; t -= o.t; return *this; }
  constexpr Dual& operator*=(const Dual& o) {
    t = t * o.v + v * o.t;
    v *= o.v;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    v /= o.v;
    t = (t - v * o.t) / o.v;
    return *this;
  }
};

template <class T> constexpr Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <class T> constexpr Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <class T> constexpr Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <class T> constexpr Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <class T> constexpr Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.t}; }

template <class T> constexpr Dual<T> operator+(Dual<T> a, T b) { a.v += b; return a; }
template <class T> constexpr Dual<T> operator+(T a, Dual<T> b) { b.v += a; return b; }
template <class T> constexpr Dual<T> operator-(Dual<T> a, T b) { a.v -= b; return a; }
template <class T> constexpr Dual<T> operator-(T a, const Dual<T>& b) { return {a - b.v, -b.t}; }
template <class T> constexpr Dual<T> operator*(const Dual<T>& a, T b) { return {a.v * b, a.t * b}; }
template <class T> constexpr Dual<T> operator*(T a, const Dual<T>& b) { return {a * b.v, a * b.t}; }
template <class T> constexpr Dual<T> operator/(const Dual<T>& a, T b) { return {a.v / b, a.t / b}; }
template <class T> constexpr Dual<T> operator/(T a, const Dual<T>& b) {
  const T iv = a / b.v;
  return {iv, -iv * b.t / b.v};
}

// Comparisons act on the value part; this matches how a.e.-differentiable
// branch points (ReLU masks, argmax pooling, clamps) are resolved.
template <class T> constexpr bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.v < b.v; }
template <class T> constexpr bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.v > b.v; }
template <class T> constexpr bool operator<=(const Dual<T>& a, const Dual<T>& b) { return a.v <= b.v; }
template <class T> constexpr bool operator>=(const Dual<T>& a, const Dual<T>& b) { return a.v >= b.v; }
template <class T> constexpr bool operator<(const Dual<T>& a, T b) { return a.v < b; }
template <class T> constexpr bool operator>(const Dual<T>& a, T b) { return a.v > b; }
template <class T> constexpr bool operator<=(const Dual<T>& a, T b) { return a.v <= b; }
template <class T> constexpr bool operator>=(const Dual<T>& a, T b) { return a.v >= b; }

template <class T> inline Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  const T s = sqrt(a.v);
  return {s, a.t / (T(2) * s)};
}
template <class T> inline Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  const T e = exp(a.v);
  return {e, a.t * e};
}
template <class T> inline Dual<T> log(const Dual<T>& a) {
  using std::log;
  return {log(a.v), a.t / a.v};
}
template <class T> inline Dual<T> abs(const Dual<T>& a) {
  return a.v < T(0) ? -a : a;
}
template <class T> inline Dual<T> max(const Dual<T>& a, const Dual<T>& b) { return a.v >= b.v ? a : b; }
template <class T> inline Dual<T> min(const Dual<T>& a, const Dual<T>& b) { return a.v <= b.v ? a : b; }

template <class T> inline bool isfinite(const Dual<T>& a) {
  return std::isfinite(a.v) && std::isfinite(a.t);
}

template <class T> struct is_dual : std::false_type {};
template <class T> struct is_dual<Dual<T>> : std::true_type {};
template <class T> inline constexpr bool is_dual_v = is_dual<T>::value;

/// Underlying real type: float for Dual<float>, double for double, ...
template <class T> struct real_of { using type = T; };
template <class T> struct real_of<Dual<T>> { using type = T; };
template <class T> using real_of_t = typename real_of<T>::type;

template <class T> constexpr T value_of(T x) { return x; }
template <class T> constexpr T value_of(const Dual<T>& x) { return x.v; }

template <class T> constexpr T tangent_of(T) { return T(0); }
template <class T> constexpr T tangent_of(const Dual<T>& x) { return x.t; }

}  // namespace sddg
