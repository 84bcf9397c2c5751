// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "sddg/data.hpp"
#include "sddg/fourier.hpp"
#include "sddg/meta.hpp"
#include "sddg/model.hpp"

namespace sddg {

struct PerturbSettings {
  LambdaMode lambda_mode = LambdaMode::per_image;
  std::string natural_pool = "procedural";  // or a directory of PNGs
  int pool_size = 64;
  std::uint64_t seed = 0;  // 0 -> derived from meta.seed
};

struct DataConfig {
  std::string root = "data";
  int image_size = 64;
  int per_domain = 2000;
  std::string train_domain;
  std::vector<DomainSpec> domains;
};

struct EvalSettings {
  double threshold = 0.5;
  int batch_size = 64;
};

struct TrainSettings {
  int checkpoint_every = 100;
  bool crop = true;
  double bn_momentum = 0.1;
};

struct RunConfig {
  std::string run_name = "run";
  std::string out_dir = "runs/run";
  BackboneConfig backbone;
  DynamicBlockConfig dynamic;
  MetaConfig meta;
  bool meta_learning = true;
  bool perturb_as_augmentation = false;  // only meaningful with meta off
  PerturbSettings perturb;
  DataConfig data;
  EvalSettings eval;
  TrainSettings train;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Four-domain ring/dot testbed (one training domain, three style-shifted
/// test domains) at the given geometry.
RunConfig default_run_config(int image_size = 64, int per_domain = 2000);

/// Strict parse: child invariants validated, unknown keys rejected.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string dump_run_config(const RunConfig& cfg);

/// Dotted-path override, e.g. apply_override(cfg, "meta.mu", "0.5").
void apply_override(RunConfig& cfg, const std::string& dotted_path,
                    const std::string& value);

/// FNV-1a of the canonical JSON dump.
std::string config_hash(const RunConfig& cfg);
/// Hash of just the model-defining subset (backbone + dynamic block).
std::string arch_hash(const RunConfig& cfg);

PerturbConfig perturb_config(const RunConfig& cfg);

}  // namespace sddg
