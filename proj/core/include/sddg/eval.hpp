// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "sddg/config.hpp"
#include "sddg/data.hpp"
#include "sddg/model.hpp"
#include "sddg/train.hpp"

namespace sddg {

struct HterResult {
  double far = 0, frr = 0, hter = 0;
};

/// Decision rule: predict attack iff score >= threshold.
/// far = P(predict attack | bonafide), frr = P(predict bonafide | attack).
HterResult hter(const std::vector<double>& scores, const std::vector<int>& labels,
                double threshold);

struct DomainEval {
  std::string domain;
  double far = 0, frr = 0, hter = 0;
  int n = 0;
  double threshold = 0.5;
};

struct EvalReport {
  std::vector<DomainEval> rows;  // ordered by domain name
  double average_hter = 0;       // unweighted mean over rows
};

std::string report_to_json(const EvalReport& report);

/// Softmax probability of the attack class, evaluation mode (running BN
/// stats, no augmentation).
std::vector<double> attack_scores(const ModelState& model, const LabeledDataset& ds,
                                  int batch_size);

EvalReport cross_domain_eval(const ModelState& model,
                             const std::vector<const LabeledDataset*>& test_domains,
                             double threshold, int batch_size);

/// CSV dump (domain,label,w_1..w_K), one row per sample; returns row count.
int dump_dynamic_weights(const ModelState& model, const LabeledDataset& ds,
                         const std::string& out_path, int batch_size);

/// Class-conditional mean dynamic-weight vectors.
std::vector<std::vector<double>> class_mean_weights(const ModelState& model,
                                                    const LabeledDataset& ds,
                                                    int batch_size);

// ---- ablation / sweep harness ----

struct AblationRow {
  std::string name;
  bool dynamic_block = false;
  bool im = false;
  bool meta = false;
};

/// The five-row component grid: baseline, +dyn, +dyn+IM, +dyn+meta, full.
std::vector<AblationRow> component_grid_rows();

struct AblationCell {
  std::uint64_t seed = 0;
  EvalReport report;
  double train_domain_hter = 0;  // sanity row, evaluated on the source domain
  std::vector<StepTrace> trace;
};

struct AblationResult {
  AblationRow row;
  std::vector<AblationCell> cells;  // one per seed
  double mean_avg_hter = 0;         // mean over seeds of per-seed averages
};

/// Applies a row's toggles to a base config.
RunConfig apply_row(const RunConfig& base, const AblationRow& row);

/// Train + evaluate each row over the given seeds. Heavy: runs
/// rows x seeds full trainings.
std::vector<AblationResult> ablation_grid(const RunConfig& base,
                                          const std::vector<AblationRow>& rows,
                                          const std::vector<std::uint64_t>& seeds,
                                          const DomainData& data,
                                          std::ostream* progress = nullptr);

std::string ablation_table_text(const std::vector<AblationResult>& results);
std::string ablation_table_csv(const std::vector<AblationResult>& results);
std::string ablation_table_json(const std::vector<AblationResult>& results);

struct SweepPoint {
  double value = 0;
  double mean_avg_hter = 0;
  std::vector<double> per_seed;
};

/// Full-SDDG runs varying one hyperparameter ("mu" or "k").
std::vector<SweepPoint> hyperparam_sweep(const RunConfig& base,
                                         const std::string& param,
                                         const std::vector<double>& values,
                                         const std::vector<std::uint64_t>& seeds,
                                         const DomainData& data,
                                         std::ostream* progress = nullptr);

std::string sweep_csv(const std::string& param, const std::vector<SweepPoint>& points);

}  // namespace sddg
