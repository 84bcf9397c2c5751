// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include "sddg/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace sddg {

HterResult hter(const std::vector<double>& scores, const std::vector<int>& labels,
                double threshold) {
  check(scores.size() == labels.size(), "hter: score/label size mismatch");
  int bona = 0, attack = 0, false_attack = 0, false_bona = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) {
      ++bona;
      if (scores[i] >= threshold) ++false_attack;
    } else {
      ++attack;
      if (scores[i] < threshold) ++false_bona;
    }
  }
  check(bona > 0 && attack > 0, "hter: both classes must be present");
  HterResult r;
  r.far = double(false_attack) / bona;
  r.frr = double(false_bona) / attack;
  r.hter = 0.5 * (r.far + r.frr);
  return r;
}

std::vector<double> attack_scores(const ModelState& model, const LabeledDataset& ds,
                                  int batch_size) {
  DataLoader loader(ds, std::min(batch_size, ds.size()), /*train=*/false, 0, 0);
  std::vector<double> scores;
  scores.reserve(ds.size());
  for (int b = 0; b < loader.num_eval_batches(); ++b) {
    const Batch batch = loader.batch(b);
    Tensor<float> images = batch.images;
    NetCache<float> cache;
    net_forward(model.def, model.params, model.buffers, BnMode::eval, images, cache);
    Mat<float> probs;
    softmax_rows(cache.logits, probs);
    for (int i = 0; i < probs.rows; ++i) scores.push_back(double(probs.at(i, 1)));
  }
  return scores;
}

EvalReport cross_domain_eval(const ModelState& model,
                             const std::vector<const LabeledDataset*>& test_domains,
                             double threshold, int batch_size) {
  check(!test_domains.empty(), "cross_domain_eval: empty domain list");
  EvalReport report;
  for (const LabeledDataset* ds : test_domains) {
    const auto scores = attack_scores(model, *ds, batch_size);
    const HterResult r = hter(scores, ds->labels, threshold);
    report.rows.push_back({ds->domain_name, r.far, r.frr, r.hter, ds->size(),
                           threshold});
  }
  std::sort(report.rows.begin(), report.rows.end(),
            [](const DomainEval& a, const DomainEval& b) { return a.domain < b.domain; });
  double sum = 0;
  for (const auto& row : report.rows) sum += row.hter;
  report.average_hter = sum / double(report.rows.size());
  return report;
}

std::string report_to_json(const EvalReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"domain", r.domain},
                    {"far", r.far},
                    {"frr", r.frr},
                    {"hter", r.hter},
                    {"n", r.n},
                    {"threshold", r.threshold}});
  json j;
  j["domains"] = std::move(rows);
  j["average_hter"] = report.average_hter;
  return j.dump(2);
}

namespace {

Mat<float> dynamic_weights_of(const ModelState& model, const Batch& batch) {
  check(model.def.dyn_cfg.enabled, "model has no dynamic block");
  Tensor<float> images = batch.images;
  NetCache<float> cache;
  net_forward(model.def, model.params, model.buffers, BnMode::eval, images, cache);
  return std::move(cache.dyn.weights);
}

}  // namespace

int dump_dynamic_weights(const ModelState& model, const LabeledDataset& ds,
                         const std::string& out_path, int batch_size) {
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  const int k = model.def.dyn.k;
  out << "domain,label";
  for (int j = 0; j < k; ++j) out << ",w_" << (j + 1);
  out << "\n";
  DataLoader loader(ds, std::min(batch_size, ds.size()), /*train=*/false, 0, 0);
  int rows = 0;
  char buf[32];
  for (int b = 0; b < loader.num_eval_batches(); ++b) {
    const Batch batch = loader.batch(b);
    const Mat<float> w = dynamic_weights_of(model, batch);
    for (int i = 0; i < w.rows; ++i, ++rows) {
      out << ds.domain_name << "," << batch.labels[i];
      for (int j = 0; j < k; ++j) {
        std::snprintf(buf, sizeof(buf), "%.6f", double(w.at(i, j)));
        out << "," << buf;
      }
      out << "\n";
    }
  }
  if (!out) throw std::runtime_error("failed while writing " + out_path);
  return rows;
}

std::vector<std::vector<double>> class_mean_weights(const ModelState& model,
                                                    const LabeledDataset& ds,
                                                    int batch_size) {
  const int k = model.def.dyn.k;
  std::vector<std::vector<double>> mean(2, std::vector<double>(k, 0.0));
  std::vector<int> count(2, 0);
  DataLoader loader(ds, std::min(batch_size, ds.size()), /*train=*/false, 0, 0);
  for (int b = 0; b < loader.num_eval_batches(); ++b) {
    const Batch batch = loader.batch(b);
    const Mat<float> w = dynamic_weights_of(model, batch);
    for (int i = 0; i < w.rows; ++i) {
      const int y = batch.labels[i];
      ++count[y];
      for (int j = 0; j < k; ++j) mean[y][j] += double(w.at(i, j));
    }
  }
  for (int y = 0; y < 2; ++y)
    if (count[y] > 0)
      for (int j = 0; j < k; ++j) mean[y][j] /= count[y];
  return mean;
}

std::vector<AblationRow> component_grid_rows() {
  return {
      {"baseline", false, false, false},
      {"dyn", true, false, false},
      {"dyn+im", true, true, false},
      {"dyn+meta", true, false, true},
      {"full", true, true, true},
  };
}

RunConfig apply_row(const RunConfig& base, const AblationRow& row) {
  RunConfig cfg = base;
  cfg.dynamic.enabled = row.dynamic_block;
  cfg.meta.mu = row.im ? base.meta.mu : 0.0;
  cfg.meta_learning = row.meta;
  cfg.perturb_as_augmentation = false;
  return cfg;
}

namespace {

AblationCell run_cell(const RunConfig& cfg, std::uint64_t seed, const DomainData& data) {
  RunConfig run = cfg;
  run.meta.seed = seed;
  ModelState model = build_model(run.backbone, run.dynamic, seed);
  AblationCell cell;
  cell.seed = seed;
  TrainLoopOptions opts;
  opts.trace_keep = &cell.trace;
  train_loop(model, data.train, run, opts);
  std::vector<const LabeledDataset*> tests;
  for (const auto& d : data.tests) tests.push_back(&d);
  cell.report = cross_domain_eval(model, tests, run.eval.threshold,
                                  run.eval.batch_size);
  const auto train_scores = attack_scores(model, data.train, run.eval.batch_size);
  cell.train_domain_hter =
      hter(train_scores, data.train.labels, run.eval.threshold).hter;
  return cell;
}

}  // namespace

std::vector<AblationResult> ablation_grid(const RunConfig& base,
                                          const std::vector<AblationRow>& rows,
                                          const std::vector<std::uint64_t>& seeds,
                                          const DomainData& data,
                                          std::ostream* progress) {
  std::vector<AblationResult> results;
  for (const AblationRow& row : rows) {
    const RunConfig cfg = apply_row(base, row);
    AblationResult res;
    res.row = row;
    double sum = 0;
    for (std::uint64_t seed : seeds) {
      if (progress)
        *progress << "[ablate] row=" << row.name << " seed=" << seed << "...\n";
      res.cells.push_back(run_cell(cfg, seed, data));
      sum += res.cells.back().report.average_hter;
      if (progress)
        *progress << "[ablate]   avg_hter=" << res.cells.back().report.average_hter
                  << " train_hter=" << res.cells.back().train_domain_hter << "\n";
    }
    res.mean_avg_hter = sum / double(seeds.size());
    results.push_back(std::move(res));
  }
  return results;
}

std::string ablation_table_text(const std::vector<AblationResult>& results) {
  std::ostringstream out;
  out << "dynamic  im  meta  | ";
  if (!results.empty())
    for (const auto& row : results.front().cells.front().report.rows)
      out << row.domain << "  ";
  out << "| avg_hter\n";
  for (const auto& res : results) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-8s %-3s %-5s | ",
                  res.row.dynamic_block ? "yes" : "-", res.row.im ? "yes" : "-",
                  res.row.meta ? "yes" : "-");
    out << line;
    // per-domain means over seeds
    const std::size_t ndom = res.cells.front().report.rows.size();
    for (std::size_t d = 0; d < ndom; ++d) {
      double m = 0;
      for (const auto& cell : res.cells) m += cell.report.rows[d].hter;
      std::snprintf(line, sizeof(line), "%6.4f  ", m / res.cells.size());
      out << line;
    }
    std::snprintf(line, sizeof(line), "| %6.4f  (%s)\n", res.mean_avg_hter,
                  res.row.name.c_str());
    out << line;
  }
  return out.str();
}

std::string ablation_table_csv(const std::vector<AblationResult>& results) {
  std::ostringstream out;
  out << "row,dynamic_block,im,meta,seed,avg_hter,train_domain_hter";
  if (!results.empty())
    for (const auto& row : results.front().cells.front().report.rows)
      out << ",hter_" << row.domain;
  out << "\n";
  for (const auto& res : results)
    for (const auto& cell : res.cells) {
      out << res.row.name << "," << res.row.dynamic_block << "," << res.row.im << ","
          << res.row.meta << "," << cell.seed << "," << cell.report.average_hter << ","
          << cell.train_domain_hter;
      for (const auto& row : cell.report.rows) out << "," << row.hter;
      out << "\n";
    }
  return out.str();
}

std::string ablation_table_json(const std::vector<AblationResult>& results) {
  json rows = json::array();
  for (const auto& res : results) {
    json cells = json::array();
    for (const auto& cell : res.cells)
      cells.push_back({{"seed", cell.seed},
                       {"avg_hter", cell.report.average_hter},
                       {"train_domain_hter", cell.train_domain_hter},
                       {"report", json::parse(report_to_json(cell.report))}});
    rows.push_back({{"name", res.row.name},
                    {"dynamic_block", res.row.dynamic_block},
                    {"im", res.row.im},
                    {"meta", res.row.meta},
                    {"mean_avg_hter", res.mean_avg_hter},
                    {"cells", std::move(cells)}});
  }
  return json{{"rows", std::move(rows)}}.dump(2);
}

std::vector<SweepPoint> hyperparam_sweep(const RunConfig& base,
                                         const std::string& param,
                                         const std::vector<double>& values,
                                         const std::vector<std::uint64_t>& seeds,
                                         const DomainData& data,
                                         std::ostream* progress) {
  check(param == "mu" || param == "k", "hyperparam_sweep: param must be mu or k");
  std::vector<SweepPoint> points;
  for (double value : values) {
    RunConfig cfg = base;
    cfg.dynamic.enabled = true;
    cfg.meta_learning = true;
    if (param == "mu")
      cfg.meta.mu = value;
    else
      cfg.dynamic.k = int(value);
    SweepPoint pt;
    pt.value = value;
    double sum = 0;
    for (std::uint64_t seed : seeds) {
      if (progress) *progress << "[sweep] " << param << "=" << value
                              << " seed=" << seed << "...\n";
      const AblationCell cell = run_cell(cfg, seed, data);
      pt.per_seed.push_back(cell.report.average_hter);
      sum += cell.report.average_hter;
    }
    pt.mean_avg_hter = sum / double(seeds.size());
    points.push_back(std::move(pt));
  }
  return points;
}

std::string sweep_csv(const std::string& param, const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << param << ",mean_avg_hter";
  const std::size_t nseeds = points.empty() ? 0 : points.front().per_seed.size();
  for (std::size_t s = 0; s < nseeds; ++s) out << ",seed" << s;
  out << "\n";
  for (const auto& pt : points) {
    out << pt.value << "," << pt.mean_avg_hter;
    for (double v : pt.per_seed) out << "," << v;
    out << "\n";
  }
  return out.str();
}

}  // namespace sddg
