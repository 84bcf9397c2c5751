// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "sddg/checkpoint.hpp"
#include "sddg/config.hpp"
#include "sddg/eval.hpp"
#include "sddg/image_io.hpp"
#include "sddg/rng.hpp"
#include "sddg/train.hpp"

namespace fs = std::filesystem;
using namespace sddg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUserError = 1;
constexpr int kExitDivergence = 2;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = load_run_config(args.config_path);
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got: " + kv);
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "run config JSON")->required();
  cmd->add_option("--set", args.overrides,
                  "dotted-path override, e.g. --set meta.mu=0.5");
}

void apply_ablate_flags(RunConfig& cfg, const std::vector<std::string>& toggles) {
  for (const std::string& t : toggles) {
    if (t == "no-dynamic") {
      cfg.dynamic.enabled = false;
      cfg.meta.mu = 0.0;
    } else if (t == "no-im") {
      cfg.meta.mu = 0.0;
    } else if (t == "no-meta") {
      cfg.meta_learning = false;
    } else {
      throw ConfigError("unknown --ablate toggle: " + t +
                        " (expected no-dynamic, no-im, no-meta)");
    }
  }
}

ModelState build_from_config(const RunConfig& cfg, std::uint64_t seed) {
  ModelState model = build_model(cfg.backbone, cfg.dynamic, seed);
  if (!cfg.backbone.pretrained_path.empty())
    load_pretrained_backbone(model, cfg.backbone.pretrained_path,
                             cfg.backbone.pretrained_gray);
  return model;
}

int cmd_gen_data(const CommonArgs& args, const std::string& out_override, bool force) {
  const RunConfig cfg = load_config(args);
  const std::string root = out_override.empty() ? cfg.data.root : out_override;
  for (const auto& spec : cfg.data.domains) {
    const fs::path dir = fs::path(root) / spec.name;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
      if (!force)
        throw ConfigError("output exists (use --force): " + dir.string());
      fs::remove_all(dir);
    }
    std::cout << "[gen-data] " << spec.name << ": " << spec.size << " samples -> "
              << dir.string() << "\n";
    save_dataset(generate_domain(spec), dir.string());
  }
  return kExitOk;
}

int cmd_train(const CommonArgs& args, const std::vector<std::string>& ablate,
              const std::string& resume) {
  RunConfig cfg = load_config(args);
  apply_ablate_flags(cfg, ablate);
  const DomainData data = prepare_domains(cfg);

  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "config.json");
    out << dump_run_config(cfg) << "\n";
  }

  ModelState model = build_from_config(cfg, cfg.meta.seed);
  TrainLoopOptions opts;
  opts.checkpoint_dir = (fs::path(cfg.out_dir) / "checkpoints").string();
  std::ofstream trace;
  if (!resume.empty()) {
    if (peek_checkpoint(resume).arch_hash != arch_hash(cfg))
      throw ConfigError("checkpoint architecture does not match the config");
    const CheckpointMeta meta =
        load_checkpoint(resume, model.def, model.params, model.buffers);
    opts.start_step = meta.step;
    trace.open(fs::path(cfg.out_dir) / "trace.jsonl", std::ios::app);
    std::cout << "[train] resuming at step " << meta.step << "\n";
  } else {
    trace.open(fs::path(cfg.out_dir) / "trace.jsonl", std::ios::trunc);
  }
  opts.trace_out = &trace;

  train_loop(model, data.train, cfg, opts);
  std::cout << "[train] done: " << cfg.meta.steps << " steps, checkpoints in "
            << opts.checkpoint_dir << "\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint,
             const std::vector<std::string>& domain_names, bool dump_weights,
             bool allow_mismatch, const std::string& out_path) {
  const RunConfig cfg = load_config(args);
  const CheckpointMeta meta = peek_checkpoint(checkpoint);
  if (!allow_mismatch && meta.arch_hash != arch_hash(cfg))
    throw ConfigError(
        "checkpoint architecture hash does not match the config "
        "(--allow-mismatch to override)");
  ModelState model = build_model(cfg.backbone, cfg.dynamic, cfg.meta.seed);
  load_checkpoint(checkpoint, model.def, model.params, model.buffers);

  const DomainData data = prepare_domains(cfg);
  std::vector<const LabeledDataset*> targets;
  const auto want = [&](const std::string& name) {
    return domain_names.empty() ||
           std::find(domain_names.begin(), domain_names.end(), name) !=
               domain_names.end();
  };
  for (const auto& d : data.tests)
    if (want(d.domain_name)) targets.push_back(&d);
  if (want(data.train.domain_name) && !domain_names.empty())
    targets.push_back(&data.train);
  if (targets.empty()) throw ConfigError("no domains selected for evaluation");

  const EvalReport report =
      cross_domain_eval(model, targets, cfg.eval.threshold, cfg.eval.batch_size);
  nlohmann::json rj = nlohmann::json::parse(report_to_json(report));
  rj["config_hash"] = config_hash(cfg);
  rj["checkpoint_step"] = meta.step;
  const std::string text = rj.dump(2);
  const std::string out_file =
      out_path.empty() ? (fs::path(cfg.out_dir) / "eval_report.json").string()
                       : out_path;
  fs::create_directories(fs::path(out_file).parent_path().empty()
                             ? "."
                             : fs::path(out_file).parent_path().string());
  std::ofstream out(out_file);
  out << text << "\n";
  std::cout << text << "\n";
  if (dump_weights) {
    for (const LabeledDataset* ds : targets) {
      const fs::path p =
          fs::path(out_file).parent_path() / ("weights_" + ds->domain_name + ".csv");
      const int rows = dump_dynamic_weights(model, *ds, p.string(),
                                            cfg.eval.batch_size);
      std::cout << "[eval] dumped " << rows << " weight rows -> " << p.string()
                << "\n";
    }
  }
  return kExitOk;
}

int cmd_ablate(const CommonArgs& args, int num_seeds, const std::string& sweep,
               const std::string& out_dir_opt) {
  const RunConfig cfg = load_config(args);
  const DomainData data = prepare_domains(cfg);
  const std::string out_dir =
      out_dir_opt.empty() ? (fs::path(cfg.out_dir) / "ablation").string()
                          : out_dir_opt;
  fs::create_directories(out_dir);
  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < num_seeds; ++s) seeds.push_back(cfg.meta.seed + s);

  if (sweep.empty()) {
    const auto results =
        ablation_grid(cfg, component_grid_rows(), seeds, data, &std::cout);
    const std::string text = ablation_table_text(results);
    std::cout << text;
    std::ofstream(fs::path(out_dir) / "table.txt") << text;
    std::ofstream(fs::path(out_dir) / "table.csv") << ablation_table_csv(results);
    nlohmann::json tj = nlohmann::json::parse(ablation_table_json(results));
    tj["config_hash"] = config_hash(cfg);
    std::ofstream(fs::path(out_dir) / "table.json") << tj.dump(2) << "\n";
    std::cout << "[ablate] wrote table.{txt,csv,json} -> " << out_dir << "\n";
    return kExitOk;
  }

  std::vector<double> values;
  std::string param;
  if (sweep == "mu") {
    param = "mu";
    values = {0.0, 0.5, 1.0, 1.5, 2.0};
  } else if (sweep == "k") {
    param = "k";
    values = {2, 3, 4, 5};
  } else {
    throw ConfigError("--sweep must be 'mu' or 'k'");
  }
  const auto points = hyperparam_sweep(cfg, param, values, seeds, data, &std::cout);
  const std::string csv = sweep_csv(param, points);
  std::ofstream(fs::path(out_dir) / ("sweep_" + param + ".csv")) << csv;
  nlohmann::json sj;
  sj["config_hash"] = config_hash(cfg);
  sj["param"] = param;
  for (const auto& pt : points)
    sj["points"].push_back({{"value", pt.value},
                            {"mean_avg_hter", pt.mean_avg_hter},
                            {"per_seed", pt.per_seed}});
  std::ofstream(fs::path(out_dir) / ("sweep_" + param + ".json")) << sj.dump(2) << "\n";
  std::cout << csv;
  std::cout << "[ablate] wrote sweep_" << param << ".{csv,json} -> " << out_dir << "\n";
  return kExitOk;
}

int cmd_perturb_preview(const CommonArgs& args, int n, const std::string& out_dir) {
  const RunConfig cfg = load_config(args);
  const DomainData data = prepare_domains(cfg);
  const NaturalPool pool =
      load_natural_pool(cfg.perturb.natural_pool, cfg.perturb.pool_size,
                        data.train.images.h,
                        hash_combine(cfg.meta.seed, fnv1a("natural_pool")));
  fs::create_directories(out_dir);
  const int count = std::min(n, data.train.size());
  Tensor<float> src(count, 1, data.train.images.h, data.train.images.w);
  for (int i = 0; i < count; ++i)
    std::copy_n(data.train.images.plane(i, 0), src.size() / count, src.plane(i, 0));
  PerturbDraws draws;
  const Tensor<float> mixed =
      perturb_batch(src, pool, perturb_config(cfg), /*step=*/0, &draws);
  for (int i = 0; i < count; ++i) {
    Image a(src.h, src.w), b(src.h, src.w);
    const float* ps = src.plane(i, 0);
    const float* pm = mixed.plane(i, 0);
    for (std::size_t j = 0; j < a.v.size(); ++j) {
      a.v[j] = ps[j];
      b.v[j] = pm[j];
    }
    const std::string stem = (fs::path(out_dir) / ("preview_" + std::to_string(i)))
                                 .string();
    write_png_gray(stem + "_source.png", a);
    write_png_gray(stem + "_natural.png", pool.images[draws.partners[i]]);
    write_png_gray(stem + "_perturbed.png", b);
    std::cout << "[perturb-preview] " << stem << "_{source,natural,perturbed}.png"
              << " lambda=" << draws.lambdas[i] << "\n";
  }
  return kExitOk;
}

int cmd_dump_weights(const CommonArgs& args, const std::string& checkpoint,
                     const std::string& domain, const std::string& out_path) {
  const RunConfig cfg = load_config(args);
  if (peek_checkpoint(checkpoint).arch_hash != arch_hash(cfg))
    throw ConfigError("checkpoint architecture hash does not match the config");
  ModelState model = build_model(cfg.backbone, cfg.dynamic, cfg.meta.seed);
  load_checkpoint(checkpoint, model.def, model.params, model.buffers);
  const DomainData data = prepare_domains(cfg);
  const LabeledDataset* target = nullptr;
  if (domain.empty() || domain == data.train.domain_name) target = &data.train;
  for (const auto& d : data.tests)
    if (d.domain_name == domain) target = &d;
  if (!target) throw ConfigError("unknown domain: " + domain);
  const int rows =
      dump_dynamic_weights(model, *target, out_path, cfg.eval.batch_size);
  std::cout << "[dump-weights] " << rows << " rows -> " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SDDG: single-domain dynamic generalization trainer"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, ablate_args, preview_args, dump_args;

  auto* gen = app.add_subcommand("gen-data", "materialize the synthetic domains");
  add_common(gen, gen_args);
  std::string gen_out;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output root (default: data.root)");
  gen->add_flag("--force", gen_force, "overwrite existing domain directories");

  auto* train = app.add_subcommand("train", "run the meta-training loop");
  add_common(train, train_args);
  std::vector<std::string> ablate_flags;
  std::string resume;
  train->add_option("--ablate", ablate_flags,
                    "disable components: no-dynamic no-im no-meta");
  train->add_option("--resume", resume, "checkpoint directory to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint across domains");
  add_common(eval, eval_args);
  std::string eval_ckpt, eval_out;
  std::vector<std::string> eval_domains;
  bool eval_dump = false, eval_allow = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--domains", eval_domains, "domain names (default: all test)");
  eval->add_flag("--dump-weights", eval_dump, "also dump dynamic weights as CSV");
  eval->add_flag("--allow-mismatch", eval_allow, "skip the architecture hash check");
  eval->add_option("--out", eval_out, "report path (default: out_dir/eval_report.json)");

  auto* ablate = app.add_subcommand("ablate", "component grid or hyperparameter sweep");
  add_common(ablate, ablate_args);
  int ablate_seeds = 3;
  std::string sweep, ablate_out;
  ablate->add_option("--seeds", ablate_seeds, "number of seeds (default 3)");
  ablate->add_option("--sweep", sweep, "sweep 'mu' or 'k' instead of the grid");
  ablate->add_option("--out", ablate_out, "output directory");

  auto* preview = app.add_subcommand("perturb-preview",
                                     "write source/natural/perturbed PNG triplets");
  add_common(preview, preview_args);
  int preview_n = 3;
  std::string preview_out = "preview";
  preview->add_option("-n", preview_n, "number of triplets");
  preview->add_option("--out", preview_out, "output directory");

  auto* dumpw = app.add_subcommand("dump-weights", "dump dynamic weights as CSV");
  add_common(dumpw, dump_args);
  std::string dump_ckpt, dump_domain, dump_out = "weights.csv";
  dumpw->add_option("--checkpoint", dump_ckpt, "checkpoint directory")->required();
  dumpw->add_option("--domain", dump_domain, "domain name (default: train domain)");
  dumpw->add_option("--out", dump_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args, gen_out, gen_force);
    if (train->parsed()) return cmd_train(train_args, ablate_flags, resume);
    if (eval->parsed())
      return cmd_eval(eval_args, eval_ckpt, eval_domains, eval_dump, eval_allow,
                      eval_out);
    if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_seeds, sweep, ablate_out);
    if (preview->parsed()) return cmd_perturb_preview(preview_args, preview_n, preview_out);
    if (dumpw->parsed()) return cmd_dump_weights(dump_args, dump_ckpt, dump_domain, dump_out);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  }
  return kExitOk;
}
