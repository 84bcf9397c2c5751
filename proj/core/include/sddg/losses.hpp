// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "sddg/ops.hpp"
#include "sddg/tensor.hpp"

namespace sddg {

// Probabilities are clamped here before log; softmax outputs never reach zero
// but weights loaded from dumps can.
inline constexpr double kProbFloor = 1e-12;

/// Scalars logged per optimization step.
struct LossReport {
  double cls_s = 0;       // classification loss on the source batch
  double ent = 0;         // entropy term of the IM loss
  double div = 0;         // diversity term of the IM loss
  double im = 0;          // ent + div
  double cls_s_plus = 0;  // classification loss on the perturbed batch
  double total = 0;
};

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
T cross_entropy(const Mat<T>& logits, const std::vector<int>& labels) {
  check(logits.rows >= 1, "cross_entropy: empty batch");
  check(int(labels.size()) == logits.rows, "cross_entropy: label count mismatch");
  using std::exp;
  using std::log;
  T total(0);
  for (int i = 0; i < logits.rows; ++i) {
    const int y = labels[i];
    check(y >= 0 && y < logits.cols, "cross_entropy: label out of range");
    const T* l = logits.row(i);
    T m = l[0];
    for (int j = 1; j < logits.cols; ++j)
      if (l[j] > m) m = l[j];
    T z(0);
    for (int j = 0; j < logits.cols; ++j) z += exp(l[j] - m);
    total += m + log(z) - l[y];
  }
  return total / T(logits.rows);
}

/// d(scale * cross_entropy)/d(logits), accumulated into glogits.
template <class T>
void cross_entropy_backward(const Mat<T>& logits, const std::vector<int>& labels,
                            T scale, Mat<T>& glogits) {
  Mat<T> probs;
  softmax_rows(logits, probs);
  const T s = scale / T(logits.rows);
  for (int i = 0; i < logits.rows; ++i)
    for (int j = 0; j < logits.cols; ++j)
      glogits.at(i, j) += s * (probs.at(i, j) - (labels[i] == j ? T(1) : T(0)));
}

template <class T>
void check_simplex_rows(const Mat<T>& weights, double tol = 1e-4) {
  for (int i = 0; i < weights.rows; ++i) {
    double s = 0;
    for (int j = 0; j < weights.cols; ++j) {
      const double e = double(value_of(weights.at(i, j)));
      check(e >= -tol, "dynamic weights: negative entry");
      s += e;
    }
    check(std::abs(s - 1.0) <= tol + 1e-9, "dynamic weights: row off the simplex");
  }
}

/// Mean row entropy, -E_i sum_k w log w, in [0, log K].
template <class T>
T entropy_loss(const Mat<T>& weights) {
  check(weights.rows >= 1, "entropy_loss: empty batch");
  check_simplex_rows(weights);
  using std::log;
  T total(0);
  for (int i = 0; i < weights.rows; ++i)
    for (int j = 0; j < weights.cols; ++j) {
      T w = weights.at(i, j);
      if (w < T(kProbFloor)) w = T(kProbFloor);
      total += w * log(w);
    }
  return -total / T(weights.rows);
}

template <class T>
void entropy_loss_backward(const Mat<T>& weights, T scale, Mat<T>& gweights) {
  using std::log;
  const T s = scale / T(weights.rows);
  for (int i = 0; i < weights.rows; ++i)
    for (int j = 0; j < weights.cols; ++j) {
      T w = weights.at(i, j);
      if (w < T(kProbFloor)) w = T(kProbFloor);
      gweights.at(i, j) += -s * (log(w) + T(1));
    }
}

/// sum_k wbar_k log wbar_k over the batch-mean weights; equal to
/// KL(wbar || uniform) - log K, so it lives in [-log K, 0].
template <class T>
T diversity_loss(const Mat<T>& weights) {
  check(weights.rows >= 1, "diversity_loss: empty batch");
  check_simplex_rows(weights);
  using std::log;
  T total(0);
  for (int j = 0; j < weights.cols; ++j) {
    T mean(0);
    for (int i = 0; i < weights.rows; ++i) mean += weights.at(i, j);
    mean = mean / T(weights.rows);
    if (mean < T(kProbFloor)) mean = T(kProbFloor);
    total += mean * log(mean);
  }
  return total;
}

template <class T>
void diversity_loss_backward(const Mat<T>& weights, T scale, Mat<T>& gweights) {
  using std::log;
  for (int j = 0; j < weights.cols; ++j) {
    T mean(0);
    for (int i = 0; i < weights.rows; ++i) mean += weights.at(i, j);
    mean = mean / T(weights.rows);
    if (mean < T(kProbFloor)) mean = T(kProbFloor);
    const T g = scale * (log(mean) + T(1)) / T(weights.rows);
    for (int i = 0; i < weights.rows; ++i) gweights.at(i, j) += g;
  }
}

/// Returns (entropy, diversity, entropy + diversity).
template <class T>
struct ImLoss {
  T ent, div, im;
};

template <class T>
ImLoss<T> im_loss(const Mat<T>& weights) {
  const T e = entropy_loss(weights);
  const T d = diversity_loss(weights);
  return {e, d, e + d};
}

template <class T>
void im_loss_backward(const Mat<T>& weights, T scale, Mat<T>& gweights) {
  entropy_loss_backward(weights, scale, gweights);
  diversity_loss_backward(weights, scale, gweights);
}

}  // namespace sddg
