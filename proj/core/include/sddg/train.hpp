// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sddg/config.hpp"
#include "sddg/data.hpp"
#include "sddg/meta.hpp"
#include "sddg/model.hpp"

namespace sddg {

/// One JSONL record per optimization step.
struct StepTrace {
  std::uint64_t step = 0;
  LossReport losses;
  double gnorm_f = 0, gnorm_d = 0, gnorm_c = 0;
  std::vector<double> lambdas;  // amplitude-mixup draws used this step
};

std::string trace_to_jsonl(const StepTrace& t);

/// Training + held-out domains generated (or loaded from data.root when the
/// domain directories exist there).
struct DomainData {
  LabeledDataset train;
  std::vector<LabeledDataset> tests;
};

DomainData prepare_domains(const RunConfig& cfg);

/// Losses above this, or any non-finite value, abort the run.
inline constexpr double kDivergenceCap = 1e4;

struct TrainLoopOptions {
  std::string checkpoint_dir;  // empty -> no checkpoints
  std::uint64_t start_step = 0;
  std::ostream* trace_out = nullptr;   // JSONL sink
  std::vector<StepTrace>* trace_keep = nullptr;
};

/// Algorithm driver: per step, sample a meta-train batch on S, take the inner
/// step, sample a second batch, perturb it to S+, evaluate the meta-test
/// loss, and apply the joint update. With meta_learning off this collapses to
/// single-level training (optionally with S+ as plain augmentation).
void train_loop(ModelState& model, const LabeledDataset& source, const RunConfig& cfg,
                const TrainLoopOptions& opts);

}  // namespace sddg
