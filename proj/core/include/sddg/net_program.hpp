// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "sddg/data.hpp"
#include "sddg/dual.hpp"
#include "sddg/losses.hpp"
#include "sddg/meta.hpp"
#include "sddg/model.hpp"

namespace sddg {

/// Batch-mean/variance snapshot laid out like the buffer vector, so the
/// running-stat commit is a single lerp.
template <class T>
struct BnSnapshot {
  std::vector<T> v;
};

template <class T>
void extract_bn_snapshot(const ModelDef& def, const NetCache<T>& cache,
                         BnSnapshot<T>& snap) {
  snap.v.assign(def.buffers.total, T(0));
  const auto grab = [&](const NormSpec& bn, const BnCache<T>& bc) {
    for (int ch = 0; ch < bn.c; ++ch) {
      snap.v[bn.rmean + ch] = bc.mean[ch];
      snap.v[bn.rvar + ch] = bc.var[ch];
    }
  };
  if (def.backbone.arch == Arch::tiny_cnn) {
    for (int s = 0; s < 3; ++s) grab(def.tiny.bn[s], cache.tiny[s].bn);
  } else {
    grab(def.resnet.stem_bn, cache.stem_bn);
    for (std::size_t b = 0; b < def.resnet.blocks.size(); ++b) {
      grab(def.resnet.blocks[b].bn1, cache.blocks[b].bn1);
      grab(def.resnet.blocks[b].bn2, cache.blocks[b].bn2);
      if (def.resnet.blocks[b].has_down)
        grab(def.resnet.blocks[b].down_bn, cache.blocks[b].down_bn);
    }
  }
}

/// Meta program backed by the real network, bound to one meta-train batch and
/// one meta-test batch. Forward passes run with batch statistics; running
/// stats are only read by evaluation-mode code elsewhere.
template <class T>
class NetProgram {
 public:
  NetProgram(const ModelDef& def, const Batch& train_batch, const Batch& test_batch)
      : def_(&def) {
    convert(train_batch.images, train_images_);
    train_labels_ = train_batch.labels;
    convert(test_batch.images, test_images_);
    test_labels_ = test_batch.labels;
    empty_buffers_.assign(def.buffers.total, T(0));  // unused in train mode
  }

  TrainEval<T> eval_train(const ParamVecs<T>& p, bool need_im) const {
    TrainEval<T> res;
    NetCache<T> cache;
    net_forward(*def_, p, empty_buffers_, BnMode::train, train_images_, cache);
    res.loss_cls = cross_entropy(cache.logits, train_labels_);

    res.g_cls.f.assign(p.f.size(), T(0));
    res.g_cls.d.assign(p.d.size(), T(0));
    res.g_cls.c.assign(p.c.size(), T(0));
    Mat<T> g_logits(cache.logits.rows, cache.logits.cols);
    cross_entropy_backward(cache.logits, train_labels_, T(1), g_logits);
    net_backward(*def_, p, cache, g_logits, static_cast<const Mat<T>*>(nullptr),
                 res.g_cls);

    if (need_im && def_->dyn_cfg.enabled) {
      const ImLoss<T> im = im_loss(cache.dyn.weights);
      res.loss_ent = im.ent;
      res.loss_div = im.div;
      res.g_im.f.assign(p.f.size(), T(0));
      res.g_im.d.assign(p.d.size(), T(0));
      res.g_im.c.assign(p.c.size(), T(0));
      Mat<T> zero_logits(cache.logits.rows, cache.logits.cols);
      Mat<T> g_weights(cache.dyn.weights.rows, cache.dyn.weights.cols);
      im_loss_backward(cache.dyn.weights, T(1), g_weights);
      net_backward(*def_, p, cache, zero_logits, &g_weights, res.g_im);
    }
    res.weights = std::move(cache.dyn.weights);
    extract_bn_snapshot(*def_, cache, last_bn_);
    return res;
  }

  TestEval<T> eval_test(const ParamVecs<T>& p) const {
    TestEval<T> res;
    NetCache<T> cache;
    net_forward(*def_, p, empty_buffers_, BnMode::train, test_images_, cache);
    extract_bn_snapshot(*def_, cache, last_test_bn_);
    res.loss_cls = cross_entropy(cache.logits, test_labels_);
    res.g.f.assign(p.f.size(), T(0));
    res.g.d.assign(p.d.size(), T(0));
    res.g.c.assign(p.c.size(), T(0));
    Mat<T> g_logits(cache.logits.rows, cache.logits.cols);
    cross_entropy_backward(cache.logits, test_labels_, T(1), g_logits);
    net_backward(*def_, p, cache, g_logits, static_cast<const Mat<T>*>(nullptr),
                 res.g);
    return res;
  }

  /// Exact Hessian-vector product of the meta-train classification loss:
  /// the whole forward+backward is replayed on dual numbers with tangent v on
  /// theta_D, and the tangent of the gradient is H * (0, v, 0).
  ParamVecs<T> hvp_train_cls(const ParamVecs<T>& p, const std::vector<T>& v_d) const {
    using D = Dual<T>;
    ParamVecs<D> pd;
    pd.f.resize(p.f.size());
    pd.d.resize(p.d.size());
    pd.c.resize(p.c.size());
    for (std::size_t i = 0; i < p.f.size(); ++i) pd.f[i] = D(p.f[i]);
    for (std::size_t i = 0; i < p.d.size(); ++i) pd.d[i] = D(p.d[i], v_d[i]);
    for (std::size_t i = 0; i < p.c.size(); ++i) pd.c[i] = D(p.c[i]);

    Tensor<D> images;
    convert(train_images_, images);
    const std::vector<D> buffers(def_->buffers.total, D(T(0)));
    NetCache<D> cache;
    net_forward(*def_, pd, buffers, BnMode::train, images, cache);
    ParamVecs<D> g;
    g.f.assign(p.f.size(), D(T(0)));
    g.d.assign(p.d.size(), D(T(0)));
    g.c.assign(p.c.size(), D(T(0)));
    Mat<D> g_logits(cache.logits.rows, cache.logits.cols);
    cross_entropy_backward(cache.logits, train_labels_, D(T(1)), g_logits);
    net_backward(*def_, pd, cache, g_logits, static_cast<const Mat<D>*>(nullptr), g);

    ParamVecs<T> h;
    h.f.resize(p.f.size());
    h.d.resize(p.d.size());
    h.c.resize(p.c.size());
    for (std::size_t i = 0; i < g.f.size(); ++i) h.f[i] = g.f[i].t;
    for (std::size_t i = 0; i < g.d.size(); ++i) h.d[i] = g.d[i].t;
    for (std::size_t i = 0; i < g.c.size(); ++i) h.c[i] = g.c[i].t;
    return h;
  }

  /// Batch statistics of the most recent eval_train / eval_test forwards.
  const BnSnapshot<T>& last_bn_snapshot() const { return last_bn_; }
  const BnSnapshot<T>& last_test_bn_snapshot() const { return last_test_bn_; }

 private:
  const ModelDef* def_;
  Tensor<T> train_images_;
  std::vector<int> train_labels_;
  Tensor<T> test_images_;
  std::vector<int> test_labels_;
  std::vector<T> empty_buffers_;
  mutable BnSnapshot<T> last_bn_;
  mutable BnSnapshot<T> last_test_bn_;
};

/// Running-stat update from a snapshot: buffers <- (1-m) buffers + m snap.
template <class T>
void commit_bn_snapshot(const BnSnapshot<T>& snap, std::vector<T>& buffers,
                        T momentum) {
  for (std::size_t i = 0; i < buffers.size(); ++i)
    buffers[i] = (T(1) - momentum) * buffers[i] + momentum * snap.v[i];
}

}  // namespace sddg
