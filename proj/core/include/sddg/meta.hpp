// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sddg/losses.hpp"
#include "sddg/model.hpp"
#include "sddg/tensor.hpp"

namespace sddg {

struct MetaConfig {
  double alpha = 1e-3;       // inner learning rate
  double beta = 1e-3;        // outer learning rate
  double mu = 1.0;           // IM loss weight
  double eta = 1.0;          // perturbation strength, forwarded to the sampler
  bool second_order = true;  // differentiate through the inner step
  int steps = 500;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

void validate(const MetaConfig& cfg);

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Losses and gradients of the meta-train batch. The IM pieces are zero when
/// not requested; g_im.c stays zero always (the IM loss does not see theta_C).
template <class T>
struct TrainEval {
  T loss_cls{};
  T loss_ent{};
  T loss_div{};
  ParamVecs<T> g_cls;
  ParamVecs<T> g_im;
  Mat<T> weights;  // dynamic weights of this batch (empty without the block)
};

template <class T>
struct TestEval {
  T loss_cls{};
  ParamVecs<T> g;  // w.r.t. (theta_F, theta_D', theta_C)
};

// A meta program evaluates the episodic objective on two bound batches:
//   TrainEval<T> eval_train(const ParamVecs<T>&, bool need_im) const
//   TestEval<T>  eval_test(const ParamVecs<T>&) const   // p.d = theta_D'
//   ParamVecs<T> hvp_train_cls(const ParamVecs<T>&, const std::vector<T>& v) const
// hvp_train_cls returns d/de grad L_cls(theta + e * (0, v, 0)) at e = 0, i.e.
// the (F,D), (D,D), (C,D) Hessian blocks of the meta-train loss applied to v.

template <class T>
struct InnerResult {
  std::vector<T> theta_d_prime;
  TrainEval<T> train;
};

namespace detail {
template <class T>
void ensure_finite_loss(T loss, const char* what) {
  using std::isfinite;
  if (!isfinite(loss)) throw DivergenceError(std::string("non-finite ") + what);
}
}  // namespace detail

/// One gradient step on L_cls w.r.t. theta_D only; theta_F and theta_C are
/// untouched. The returned TrainEval carries the batch losses, the gradients
/// and the dynamic weights for the IM loss.
template <class T, class P>
InnerResult<T> inner_update(const P& prog, const ParamVecs<T>& params, T alpha,
                            bool need_im) {
  InnerResult<T> res;
  res.train = prog.eval_train(params, need_im);
  detail::ensure_finite_loss(res.train.loss_cls, "meta-train classification loss");
  res.theta_d_prime = params.d;
  axpy(res.theta_d_prime.size(), -alpha, res.train.g_cls.d.data(),
       res.theta_d_prime.data());
  return res;
}

/// Cross-entropy of the meta-test batch evaluated with theta_D' in place of
/// theta_D. No IM term exists on this path.
template <class T, class P>
TestEval<T> meta_test_loss(const P& prog, const std::vector<T>& theta_f,
                           const std::vector<T>& theta_d_prime,
                           const std::vector<T>& theta_c) {
  ParamVecs<T> p{theta_f, theta_d_prime, theta_c};
  TestEval<T> res = prog.eval_test(p);
  detail::ensure_finite_loss(res.loss_cls, "meta-test classification loss");
  return res;
}

template <class T>
void ensure_finite_partition(const std::vector<T>& g, const char* name) {
  using std::isfinite;
  for (const T& x : g)
    if (!isfinite(x))
      throw DivergenceError(std::string("non-finite gradient in ") + name);
}

/// Plain gradient descent on all three partitions.
template <class T>
void meta_optimize(ParamVecs<T>& params, const ParamVecs<T>& grads, T beta) {
  ensure_finite_partition(grads.f, "theta_F");
  ensure_finite_partition(grads.d, "theta_D");
  ensure_finite_partition(grads.c, "theta_C");
  axpy(params.f.size(), -beta, grads.f.data(), params.f.data());
  axpy(params.d.size(), -beta, grads.d.data(), params.d.data());
  axpy(params.c.size(), -beta, grads.c.data(), params.c.data());
}

template <class T>
struct MetaStepResult {
  LossReport losses;
  ParamVecs<T> grads;  // the combined outer gradient that was applied
  Mat<T> weights;      // meta-train dynamic weights
};

/// Joint meta-gradient of
///   L_cls(S) + mu * L_IM(S) + L_cls(S+)(theta_F, theta_D', theta_C)
/// without applying the update. theta_C receives no IM term. In second-order
/// mode the S+ gradients flow through theta_D' = theta_D - alpha grad L_cls,
/// which contributes -alpha * H_{.,D} * g_{D'} correction terms.
template <class T, class P>
MetaStepResult<T> meta_gradients(const P& prog, const ParamVecs<T>& params,
                                 const MetaConfig& cfg) {
  const T alpha = T(cfg.alpha);
  const T mu = T(cfg.mu);
  const bool need_im = cfg.mu != 0.0 && !params.d.empty();

  InnerResult<T> inner = inner_update(prog, params, alpha, need_im);
  TestEval<T> test = meta_test_loss(prog, params.f, inner.theta_d_prime, params.c);

  MetaStepResult<T> res;
  res.grads = inner.train.g_cls;
  if (need_im) {
    axpy(res.grads.f.size(), mu, inner.train.g_im.f.data(), res.grads.f.data());
    axpy(res.grads.d.size(), mu, inner.train.g_im.d.data(), res.grads.d.data());
  }
  axpy(res.grads.f.size(), T(1), test.g.f.data(), res.grads.f.data());
  axpy(res.grads.d.size(), T(1), test.g.d.data(), res.grads.d.data());
  axpy(res.grads.c.size(), T(1), test.g.c.data(), res.grads.c.data());

  if (cfg.second_order && cfg.alpha != 0.0 && !params.d.empty()) {
    ParamVecs<T> h = prog.hvp_train_cls(params, test.g.d);
    axpy(res.grads.f.size(), -alpha, h.f.data(), res.grads.f.data());
    axpy(res.grads.d.size(), -alpha, h.d.data(), res.grads.d.data());
    axpy(res.grads.c.size(), -alpha, h.c.data(), res.grads.c.data());
  }

  res.losses.cls_s = double(value_of(inner.train.loss_cls));
  res.losses.ent = double(value_of(inner.train.loss_ent));
  res.losses.div = double(value_of(inner.train.loss_div));
  res.losses.im = res.losses.ent + res.losses.div;
  res.losses.cls_s_plus = double(value_of(test.loss_cls));
  res.losses.total =
      res.losses.cls_s + cfg.mu * res.losses.im + res.losses.cls_s_plus;
  res.weights = std::move(inner.train.weights);
  return res;
}

/// One full episodic step: meta-train, inner update, meta-test, joint update.
template <class T, class P>
MetaStepResult<T> sddg_meta_step(const P& prog, ParamVecs<T>& params,
                                 const MetaConfig& cfg) {
  MetaStepResult<T> res = meta_gradients(prog, params, cfg);
  meta_optimize(params, res.grads, T(cfg.beta));
  return res;
}

/// Non-meta (single-level) step: grad of L_cls(S) + mu * L_IM(S), plus the
/// second batch as plain augmentation when provided by the program.
template <class T, class P>
MetaStepResult<T> single_level_step(const P& prog, ParamVecs<T>& params, double mu,
                                    double beta, bool use_second_batch) {
  const bool need_im = mu != 0.0 && !params.d.empty();
  TrainEval<T> ev = prog.eval_train(params, need_im);
  detail::ensure_finite_loss(ev.loss_cls, "classification loss");
  MetaStepResult<T> res;
  res.grads = ev.g_cls;
  if (need_im) {
    axpy(res.grads.f.size(), T(mu), ev.g_im.f.data(), res.grads.f.data());
    axpy(res.grads.d.size(), T(mu), ev.g_im.d.data(), res.grads.d.data());
  }
  res.losses.cls_s = double(value_of(ev.loss_cls));
  res.losses.ent = double(value_of(ev.loss_ent));
  res.losses.div = double(value_of(ev.loss_div));
  res.losses.im = res.losses.ent + res.losses.div;
  if (use_second_batch) {
    TestEval<T> aug = prog.eval_test(params);
    detail::ensure_finite_loss(aug.loss_cls, "augmentation loss");
    axpy(res.grads.f.size(), T(1), aug.g.f.data(), res.grads.f.data());
    axpy(res.grads.d.size(), T(1), aug.g.d.data(), res.grads.d.data());
    axpy(res.grads.c.size(), T(1), aug.g.c.data(), res.grads.c.data());
    res.losses.cls_s_plus = double(value_of(aug.loss_cls));
  }
  res.losses.total = res.losses.cls_s + mu * res.losses.im + res.losses.cls_s_plus;
  res.weights = std::move(ev.weights);
  meta_optimize(params, res.grads, T(beta));
  return res;
}

}  // namespace sddg
