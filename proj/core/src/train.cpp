// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include "sddg/train.hpp"

#include <cmath>
#include <filesystem>
#include <ostream>

#include <json.hpp>

#include "sddg/checkpoint.hpp"
#include "sddg/net_program.hpp"
#include "sddg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sddg {

std::string trace_to_jsonl(const StepTrace& t) {
  json j;
  j["step"] = t.step;
  j["cls_s"] = t.losses.cls_s;
  j["ent"] = t.losses.ent;
  j["div"] = t.losses.div;
  j["im"] = t.losses.im;
  j["cls_s_plus"] = t.losses.cls_s_plus;
  j["total"] = t.losses.total;
  j["gnorm_f"] = t.gnorm_f;
  j["gnorm_d"] = t.gnorm_d;
  j["gnorm_c"] = t.gnorm_c;
  j["lambdas"] = t.lambdas;
  return j.dump();
}

DomainData prepare_domains(const RunConfig& cfg) {
  check(!cfg.data.domains.empty(), "config has no domains");
  DomainData out;
  bool have_train = false;
  for (const auto& spec : cfg.data.domains) {
    const fs::path dir = fs::path(cfg.data.root) / spec.name;
    LabeledDataset ds = fs::exists(dir / "index.json") ? load_dataset(dir.string())
                                                       : generate_domain(spec);
    if (spec.name == cfg.data.train_domain) {
      out.train = std::move(ds);
      have_train = true;
    } else {
      out.tests.push_back(std::move(ds));
    }
  }
  check(have_train, "train_domain not present in config domains");
  return out;
}

namespace {

double gnorm(const std::vector<float>& g) {
  double s = 0;
  for (float x : g) s += double(x) * x;
  return std::sqrt(s);
}

void guard_losses(const LossReport& l, std::uint64_t step) {
  const double vals[] = {l.cls_s, l.im, l.cls_s_plus, l.total};
  for (double v : vals)
    if (!std::isfinite(v) || std::abs(v) > kDivergenceCap)
      throw DivergenceError("divergence at step " + std::to_string(step) +
                            ": loss = " + std::to_string(v));
}

}  // namespace

void train_loop(ModelState& model, const LabeledDataset& source, const RunConfig& cfg,
                const TrainLoopOptions& opts) {
  const MetaConfig& mc = cfg.meta;
  DataLoader loader(source, mc.batch_size, /*train=*/true,
                    cfg.train.crop ? -1 : 0, mc.seed);
  const bool meta = cfg.meta_learning;
  const bool needs_pool = meta ? mc.eta > 0 : cfg.perturb_as_augmentation;
  NaturalPool pool;
  PerturbConfig pcfg = perturb_config(cfg);
  if (needs_pool)
    pool = load_natural_pool(cfg.perturb.natural_pool, cfg.perturb.pool_size,
                             source.images.h,
                             hash_combine(mc.seed, fnv1a("natural_pool")));

  const std::string cfg_hash = config_hash(cfg);
  const std::string a_hash = arch_hash(cfg);
  const auto save = [&](std::uint64_t step, const std::string& name) {
    if (opts.checkpoint_dir.empty()) return;
    CheckpointMeta meta_out;
    meta_out.step = step;
    meta_out.rng_seed = mc.seed;
    meta_out.config_hash = cfg_hash;
    meta_out.arch_hash = a_hash;
    save_checkpoint((fs::path(opts.checkpoint_dir) / name).string(), model, meta_out);
  };

  const double mu_eff = cfg.dynamic.enabled ? mc.mu : 0.0;
  for (std::uint64_t step = opts.start_step; step < std::uint64_t(mc.steps); ++step) {
    const Batch batch_s = loader.batch(2 * step);
    Batch batch_q = loader.batch(2 * step + 1);
    PerturbDraws draws;
    const bool use_second = meta || cfg.perturb_as_augmentation;
    if (use_second && needs_pool)
      batch_q.images = perturb_batch(batch_q.images, pool, pcfg, step, &draws);

    NetProgram<float> prog(model.def, batch_s, batch_q);
    MetaStepResult<float> res;
    if (meta) {
      MetaConfig step_cfg = mc;
      step_cfg.mu = mu_eff;
      res = sddg_meta_step(prog, model.params, step_cfg);
    } else {
      res = single_level_step(prog, model.params, mu_eff, mc.beta, use_second);
    }
    commit_bn_snapshot(prog.last_bn_snapshot(), model.buffers,
                       float(cfg.train.bn_momentum));
    if (use_second)
      commit_bn_snapshot(prog.last_test_bn_snapshot(), model.buffers,
                         float(cfg.train.bn_momentum));
    guard_losses(res.losses, step);

    StepTrace trace;
    trace.step = step;
    trace.losses = res.losses;
    trace.gnorm_f = gnorm(res.grads.f);
    trace.gnorm_d = gnorm(res.grads.d);
    trace.gnorm_c = gnorm(res.grads.c);
    trace.lambdas = std::move(draws.lambdas);
    if (opts.trace_out) *opts.trace_out << trace_to_jsonl(trace) << "\n";
    if (opts.trace_keep) opts.trace_keep->push_back(trace);

    if (cfg.train.checkpoint_every > 0 &&
        (step + 1) % std::uint64_t(cfg.train.checkpoint_every) == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06llu",
                    static_cast<unsigned long long>(step + 1));
      save(step + 1, name);
    }
  }
  save(std::uint64_t(mc.steps), "final");
}

}  // namespace sddg
