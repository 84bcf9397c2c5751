// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance suite. Each test case prints one
//   [ACCEPTANCE] criterion N (...): PASS|FAIL
// line; run the binary without filters to execute all of them.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "common/toy_program.hpp"
#include "sddg/checkpoint.hpp"
#include "sddg/config.hpp"
#include "sddg/eval.hpp"
#include "sddg/net_program.hpp"
#include "sddg/train.hpp"
#include "unit/test_util.hpp"

using namespace sddg;
using namespace sddg::test;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  const char* id;
  const char* label;
  bool ok = true;

  Verdict(const char* id_, const char* label_) : id(id_), label(label_) {}
  ~Verdict() {
    if (std::uncaught_exceptions() > 0) ok = false;  // aborted mid-criterion
    std::printf("[ACCEPTANCE] criterion %s (%s): %s\n", id, label,
                ok ? "PASS" : "FAIL");
    std::fflush(stdout);
  }
  void expect(bool cond) {
    CHECK(cond);
    ok &= cond;
  }
};

constexpr double kLog2 = 0.69314718055994530941723212145818;
constexpr double kLog3 = 1.0986122886681096913952452369225;

Mat<double> simplex_rows(std::initializer_list<std::initializer_list<double>> data) {
  Mat<double> m(int(data.size()), int(data.begin()->size()));
  int i = 0;
  for (const auto& row : data) {
    int j = 0;
    for (double v : row) m.at(i, j++) = v;
    ++i;
  }
  return m;
}

/// The desk-scale testbed the training criteria run on: 32x32 images, a
/// 16/32/32 backbone, one training domain and three style-shifted test
/// domains.
RunConfig acceptance_run_config() {
  RunConfig cfg = default_run_config(32, 256);
  cfg.backbone.feature_channels = 32;
  cfg.dynamic.k = 3;
  cfg.meta.alpha = 0.02;
  cfg.meta.beta = 0.05;
  cfg.meta.mu = 1.0;
  cfg.meta.eta = 1.0;
  cfg.meta.second_order = true;
  cfg.meta.steps = 300;
  cfg.meta.batch_size = 8;
  cfg.perturb.pool_size = 48;
  cfg.train.checkpoint_every = 0;
  for (auto& d : cfg.data.domains) {
    d.image_size = 32;
    d.size = 256;
  }
  cfg.data.domains[0].size = 512;
  return cfg;
}

Batch deterministic_batch(int n, int s, std::uint64_t seed) {
  Batch b;
  b.images = Tensor<float>(n, 1, s, s);
  Rng rng = rng_stream(seed, "acceptance_batch");
  for (auto& v : b.images.v) v = float(rng.uniform());
  b.labels.resize(n);
  for (int i = 0; i < n; ++i) b.labels[i] = i % 2;
  return b;
}

}  // namespace

TEST_CASE("criterion 1: analytic loss values") {
  Verdict v("1", "analytic loss values");

  v.expect(std::abs(entropy_loss(simplex_rows({{1.0, 0.0, 0.0}}))) <= 1e-6);
  v.expect(std::abs(entropy_loss(simplex_rows({{1. / 3, 1. / 3, 1. / 3}})) - kLog3) <=
           1e-6);
  v.expect(std::abs(diversity_loss(simplex_rows(
               {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}})) + kLog3) <= 1e-6);
  v.expect(std::abs(diversity_loss(simplex_rows({{1, 0, 0}, {1, 0, 0}}))) <= 1e-6);
  const auto im_uniform = im_loss(simplex_rows({{1. / 3, 1. / 3, 1. / 3}}));
  v.expect(std::abs(im_uniform.ent - kLog3) <= 1e-6);
  v.expect(std::abs(im_uniform.div + kLog3) <= 1e-6);
  v.expect(std::abs(im_uniform.im) <= 1e-6);
  const auto im_ideal = im_loss(simplex_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  v.expect(std::abs(im_ideal.ent) <= 1e-6);
  v.expect(std::abs(im_ideal.im + kLog3) <= 1e-6);

  Mat<double> logits(1, 2);
  v.expect(std::abs(cross_entropy(logits, {0}) - kLog2) <= 1e-9);
  logits.at(0, 0) = 30.0;
  logits.at(0, 1) = -30.0;
  v.expect(cross_entropy(logits, {0}) <= 1e-9);
}

TEST_CASE("criterion 2: simplex and instance-norm invariants") {
  Verdict v("2", "simplex and IN invariants");

  // 10^4 randomized adaptor inputs across randomized parameter scales
  BackboneConfig bc;
  bc.feature_channels = 16;
  bc.image_size = 16;
  DynamicBlockConfig dc;
  dc.k = 3;
  Rng rng(2026);
  int rows_checked = 0;
  bool simplex_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    ModelState m = build_model(bc, dc, 5000 + trial);
    std::vector<double> theta(m.params.d.begin(), m.params.d.end());
    for (auto& x : theta) x *= rng.uniform(-4.0, 4.0);
    Tensor<double> f(100, 16, 2, 2);
    for (auto& x : f.v) x = rng.uniform(-6.0, 6.0);
    Mat<double> w;
    dyn_adaptor_weights<double>(m.def.dyn, theta.data(), f, nullptr, w);
    for (int i = 0; i < w.rows; ++i, ++rows_checked) {
      double sum = 0;
      for (int k = 0; k < w.cols; ++k) {
        simplex_ok &= w.at(i, k) >= 0.0;
        sum += w.at(i, k);
      }
      simplex_ok &= std::abs(sum - 1.0) <= 1e-6;
    }
  }
  v.expect(rows_checked == 10000);
  v.expect(simplex_ok);

  // instance-norm moments
  bool in_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> x(2, 8, 8, 8);
    for (auto& e : x.v) e = rng.uniform(-2.0, 2.0);
    Tensor<double> y;
    instance_normalize(x, 1e-5, y);
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < x.c; ++c) {
        const double* p = y.plane(i, c);
        double mean = 0, var = 0;
        for (int j = 0; j < 64; ++j) mean += p[j] / 64;
        for (int j = 0; j < 64; ++j) var += (p[j] - mean) * (p[j] - mean) / 64;
        in_ok &= std::abs(mean) <= 1e-4;
        in_ok &= std::abs(var - 1.0) <= 1e-4;
      }
  }
  v.expect(in_ok);
}

TEST_CASE("criterion 3: Fourier round trip and mixup endpoints") {
  Verdict v("3", "Fourier round trip and endpoint identities");

  Rng rng(33);
  bool round_ok = true, endpoint_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    Image img(32, 32);
    for (auto& e : img.v) e = rng.uniform();
    const SpectrumPair sp = decompose(img);
    const Image back = recompose(sp);
    for (std::size_t i = 0; i < img.v.size(); ++i)
      round_ok &= std::abs(back.v[i] - img.v[i]) <= 1e-5;

    Image other(32, 32);
    for (auto& e : other.v) e = rng.uniform();
    const SpectrumPair sp_other = decompose(other);
    endpoint_ok &=
        mix_amplitude(sp.amplitude, sp_other.amplitude, 0.0) == sp.amplitude;
    endpoint_ok &=
        mix_amplitude(sp.amplitude, sp_other.amplitude, 1.0) == sp_other.amplitude;
    if (trial < 10) {
      SpectrumPair mixed = sp;
      mixed.amplitude = mix_amplitude(sp.amplitude, sp_other.amplitude, 0.0);
      const Image same = recompose(mixed);
      for (std::size_t i = 0; i < img.v.size(); ++i)
        endpoint_ok &= std::abs(same.v[i] - img.v[i]) <= 1e-5;
    }
  }
  v.expect(round_ok);
  v.expect(endpoint_ok);
}

TEST_CASE("criterion 4: gradient oracles on a tiny model") {
  Verdict v("4", "analytic vs finite-difference gradients");

  BackboneConfig bc;
  bc.feature_channels = 8;
  bc.image_size = 16;
  DynamicBlockConfig dc;
  dc.k = 2;
  // Fixture picked away from ReLU kinks: the joint objective embeds an inner
  // gradient, so finite differences are only a valid oracle where no mask
  // flips inside the stencil.
  ModelState m = build_model(bc, dc, 405);
  v.expect(m.def.trainable_count() <= 5000);

  auto params = convert_params<float, double>(m.params);
  const Batch bs = deterministic_batch(3, 16, 1005);
  const NaturalPool pool = load_natural_pool("procedural", 8, 16, 17);
  PerturbConfig pc;
  pc.eta = 0.8;
  pc.seed = 23;
  Batch bq = deterministic_batch(3, 16, 1105);
  bq.images = perturb_batch(bq.images, pool, pc, 0);  // frozen S+ batch
  NetProgram<double> prog(m.def, bs, bq);

  MetaConfig mc;
  mc.alpha = 0.05;
  mc.mu = 0.7;
  mc.second_order = true;

  // L_cls gradients
  {
    const auto ev = prog.eval_train(params, false);
    const auto objective = [&]() {
      return double(prog.eval_train(params, false).loss_cls);
    };
    v.expect(rel_l2(ev.g_cls.f, fd_gradient(params.f, objective)) < 1e-4);
    v.expect(rel_l2(ev.g_cls.d, fd_gradient(params.d, objective)) < 1e-4);
    v.expect(rel_l2(ev.g_cls.c, fd_gradient(params.c, objective)) < 1e-4);
  }
  // L_IM gradients (structurally no theta_C dependence)
  {
    const auto ev = prog.eval_train(params, true);
    const auto objective = [&]() {
      const auto e = prog.eval_train(params, true);
      return double(e.loss_ent + e.loss_div);
    };
    v.expect(rel_l2(ev.g_im.f, fd_gradient(params.f, objective)) < 1e-4);
    v.expect(rel_l2(ev.g_im.d, fd_gradient(params.d, objective)) < 1e-4);
    bool c_zero = true;
    for (double g : ev.g_im.c) c_zero &= g == 0.0;
    v.expect(c_zero);
  }
  // Full joint objective: L_cls(S) + mu L_IM(S) + L_cls(S+)(F, D', C)
  {
    const auto joint = [&]() {
      const auto ev = prog.eval_train(params, true);
      std::vector<double> dprime = params.d;
      axpy(dprime.size(), -mc.alpha, ev.g_cls.d.data(), dprime.data());
      const auto te = meta_test_loss(prog, params.f, dprime, params.c);
      return double(ev.loss_cls + mc.mu * (ev.loss_ent + ev.loss_div) +
                    te.loss_cls);
    };
    const auto analytic = meta_gradients(prog, params, mc);
    v.expect(rel_l2(analytic.grads.f, fd_gradient(params.f, joint)) < 1e-4);
    v.expect(rel_l2(analytic.grads.d, fd_gradient(params.d, joint)) < 1e-4);
    v.expect(rel_l2(analytic.grads.c, fd_gradient(params.c, joint)) < 1e-4);
  }
}

TEST_CASE("criterion 5: meta-update exactness on the 3-parameter toy") {
  Verdict v("5", "closed-form bi-level updates");

  const ToyProgram toy = crafted_toy();
  const double f0 = 0.8, d0 = 1.0, c0 = -0.5;
  MetaConfig cfg;
  cfg.alpha = 0.1;
  cfg.beta = 0.05;
  cfg.mu = 0.7;

  cfg.second_order = true;
  {
    ParamVecs<double> p{{f0}, {d0}, {c0}};
    sddg_meta_step(toy, p, cfg);
    const auto ref =
        toy_step_by_hand(toy, f0, d0, c0, cfg.alpha, cfg.beta, cfg.mu, true);
    v.expect(std::abs(p.f[0] - ref.f1) < 1e-12);
    v.expect(std::abs(p.d[0] - ref.d1) < 1e-12);
    v.expect(std::abs(p.c[0] - ref.c1) < 1e-12);
  }
  cfg.second_order = false;
  {
    ParamVecs<double> p{{f0}, {d0}, {c0}};
    sddg_meta_step(toy, p, cfg);
    const auto ref =
        toy_step_by_hand(toy, f0, d0, c0, cfg.alpha, cfg.beta, cfg.mu, false);
    v.expect(std::abs(p.f[0] - ref.f1) < 1e-12);
    v.expect(std::abs(p.d[0] - ref.d1) < 1e-12);
    v.expect(std::abs(p.c[0] - ref.c1) < 1e-12);
  }
  {
    ParamVecs<double> p2{{f0}, {d0}, {c0}}, p1{{f0}, {d0}, {c0}};
    cfg.second_order = true;
    sddg_meta_step(toy, p2, cfg);
    cfg.second_order = false;
    sddg_meta_step(toy, p1, cfg);
    v.expect(std::abs(p2.d[0] - p1.d[0]) > 1e-6);  // curvature separates the modes

    cfg.alpha = 0.0;
    ParamVecs<double> q2{{f0}, {d0}, {c0}}, q1{{f0}, {d0}, {c0}};
    cfg.second_order = true;
    sddg_meta_step(toy, q2, cfg);
    cfg.second_order = false;
    sddg_meta_step(toy, q1, cfg);
    v.expect(q2.f[0] == q1.f[0]);
    v.expect(q2.d[0] == q1.d[0]);
    v.expect(q2.c[0] == q1.c[0]);
  }
}

TEST_CASE("criterion 6 and 7: ablation ordering and weight separation") {
  Verdict v6("6", "ablation ordering on the synthetic testbed");

  const RunConfig cfg = acceptance_run_config();
  const DomainData data = prepare_domains(cfg);
  const std::vector<std::uint64_t> seeds = {7, 8, 9};
  const auto results =
      ablation_grid(cfg, component_grid_rows(), seeds, data, &std::cout);
  REQUIRE(results.size() == 5);
  const auto& baseline = results[0];
  const auto& full = results[4];

  std::printf("[ACCEPTANCE]   mean avg HTER per row:");
  for (const auto& r : results)
    std::printf(" %s=%.3f", r.row.name.c_str(), r.mean_avg_hter);
  std::printf("\n");

  // full SDDG beats the ERM baseline by at least 2 absolute points
  v6.expect(full.mean_avg_hter <= baseline.mean_avg_hter - 0.02);
  // every single add-on is at or below the baseline on average
  for (int row : {1, 2, 3})
    v6.expect(results[row].mean_avg_hter <= baseline.mean_avg_hter + 1e-9);
  // the testbed exhibits a real domain gap for plain training
  double erm_worst = 0, erm_train = 0;
  for (const auto& cell : baseline.cells) {
    double worst = 0;
    for (const auto& row : cell.report.rows) worst = std::max(worst, row.hter);
    erm_worst += worst / baseline.cells.size();
    erm_train += cell.train_domain_hter / baseline.cells.size();
  }
  v6.expect(erm_worst - erm_train >= 0.10);
  // training sanity: the source classification loss trends down
  for (const auto& cell : full.cells) {
    const int w = 100;
    REQUIRE(int(cell.trace.size()) >= 2 * w);
    double ma_first = 0, ma_last = 0;
    for (int i = 0; i < w; ++i) {
      ma_first += cell.trace[i].losses.cls_s / w;
      ma_last += cell.trace[cell.trace.size() - 1 - i].losses.cls_s / w;
    }
    v6.expect(ma_last < ma_first);
  }

  Verdict v7("7", "class-conditional dynamic-weight separation");
  double mean_l2 = 0;
  for (std::uint64_t seed : seeds) {
    RunConfig run = apply_row(cfg, component_grid_rows()[4]);
    run.meta.seed = seed;
    ModelState model = build_model(run.backbone, run.dynamic, seed);
    TrainLoopOptions opts;
    train_loop(model, data.train, run, opts);
    const auto means = class_mean_weights(model, data.train, cfg.eval.batch_size);
    double l2 = 0;
    for (std::size_t k = 0; k < means[0].size(); ++k)
      l2 += (means[0][k] - means[1][k]) * (means[0][k] - means[1][k]);
    mean_l2 += std::sqrt(l2) / double(seeds.size());
  }
  std::printf(
      "[ACCEPTANCE]   class-mean weight L2 separation (mean over seeds): %.4f\n",
      mean_l2);
  v7.expect(mean_l2 > 0.01);
}

TEST_CASE("criterion 8: determinism and checkpoint resume") {
  Verdict v("8", "trace determinism and resume equivalence");

  RunConfig cfg = default_run_config(16, 64);
  cfg.backbone.feature_channels = 8;
  cfg.dynamic.k = 2;
  cfg.meta.alpha = 0.02;
  cfg.meta.beta = 0.03;
  cfg.meta.steps = 30;
  cfg.meta.batch_size = 6;
  cfg.meta.seed = 12;
  cfg.perturb.pool_size = 8;
  cfg.train.checkpoint_every = 15;
  for (auto& d : cfg.data.domains) {
    d.size = 64;
    d.image_size = 16;
  }
  const DomainData data = prepare_domains(cfg);
  const fs::path dir = fs::temp_directory_path() / "sddg_acceptance_resume";
  fs::remove_all(dir);

  const auto run_full = [&](const std::string& ckpt_dir) {
    ModelState m = build_model(cfg.backbone, cfg.dynamic, cfg.meta.seed);
    std::ostringstream trace;
    TrainLoopOptions opts;
    opts.trace_out = &trace;
    opts.checkpoint_dir = ckpt_dir;
    train_loop(m, data.train, cfg, opts);
    return std::pair{m, trace.str()};
  };

  const auto [m1, trace1] = run_full((dir / "a").string());
  const auto [m2, trace2] = run_full("");
  v.expect(!trace1.empty());
  v.expect(trace1 == trace2);  // bit-identical traces
  v.expect(m1.params.f == m2.params.f);
  v.expect(m1.params.d == m2.params.d);
  v.expect(m1.params.c == m2.params.c);

  // resume from the midpoint checkpoint
  ModelState resumed = build_model(cfg.backbone, cfg.dynamic, cfg.meta.seed);
  const CheckpointMeta meta = load_checkpoint((dir / "a" / "step_000015").string(),
                                              resumed.def, resumed.params,
                                              resumed.buffers);
  v.expect(meta.step == 15);
  TrainLoopOptions opts;
  opts.start_step = meta.step;
  train_loop(resumed, data.train, cfg, opts);
  REQUIRE(resumed.params.f.size() == m1.params.f.size());
  double max_diff = 0;
  const auto diff = [&](const std::vector<float>& a, const std::vector<float>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
      max_diff = std::max(max_diff, double(std::abs(a[i] - b[i])));
  };
  diff(resumed.params.f, m1.params.f);
  diff(resumed.params.d, m1.params.d);
  diff(resumed.params.c, m1.params.c);
  diff(resumed.buffers, m1.buffers);
  std::printf("[ACCEPTANCE]   resume max parameter difference: %.3g\n", max_diff);
  v.expect(max_diff <= 1e-6);
  fs::remove_all(dir);
}

TEST_CASE("criterion 9: hyperparameter sweep harness") {
  Verdict v("9", "mu and K sweeps emit curve artifacts");

  RunConfig cfg = acceptance_run_config();
  const DomainData data = prepare_domains(cfg);
  const std::vector<std::uint64_t> seeds = {7};
  const fs::path out_dir = "acceptance_artifacts";
  fs::create_directories(out_dir);

  const auto mu_points =
      hyperparam_sweep(cfg, "mu", {0.0, 0.5, 1.0, 1.5, 2.0}, seeds, data, &std::cout);
  const auto k_points =
      hyperparam_sweep(cfg, "k", {2, 3, 4, 5}, seeds, data, &std::cout);
  v.expect(mu_points.size() == 5);
  v.expect(k_points.size() == 4);
  for (const auto& pts : {mu_points, k_points})
    for (const auto& pt : pts) {
      v.expect(std::isfinite(pt.mean_avg_hter));
      v.expect(pt.mean_avg_hter >= 0.0);
      v.expect(pt.mean_avg_hter <= 1.0);
    }

  std::ofstream(out_dir / "sweep_mu.csv") << sweep_csv("mu", mu_points);
  std::ofstream(out_dir / "sweep_k.csv") << sweep_csv("k", k_points);
  v.expect(fs::file_size(out_dir / "sweep_mu.csv") > 0);
  v.expect(fs::file_size(out_dir / "sweep_k.csv") > 0);

  // curve artifact: one line per sweep value plus a header
  std::ifstream in(out_dir / "sweep_mu.csv");
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  v.expect(lines == 6);
  std::printf("[ACCEPTANCE]   sweep artifacts in %s\n",
              fs::absolute(out_dir).string().c_str());
}
