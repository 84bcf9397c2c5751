// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sddg/config.hpp"
#include "sddg/eval.hpp"
#include "test_util.hpp"

using namespace sddg;
namespace fs = std::filesystem;

namespace {

LabeledDataset eval_domain(const std::string& name, std::uint64_t seed, int size = 64) {
  DomainSpec spec;
  spec.name = name;
  spec.size = size;
  spec.image_size = 16;
  spec.seed = seed;
  spec.class0_texture.pattern = TexturePattern::rings;
  spec.class0_texture.base_freq = 2.5;
  spec.class1_texture.pattern = TexturePattern::dots;
  spec.class1_texture.base_freq = 6.0;
  return generate_domain(spec);
}

ModelState eval_model(std::uint64_t seed = 3) {
  BackboneConfig cfg;
  cfg.feature_channels = 8;
  cfg.image_size = 16;
  DynamicBlockConfig dyn;
  dyn.k = 3;
  return build_model(cfg, dyn, seed);
}

}  // namespace

TEST_CASE("hter definition") {
  SUBCASE("constructed far 0.2 / frr 0.1 averages to 0.15") {
    // 10 bonafide with 2 above threshold, 10 attack with 1 below
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) {
      scores.push_back(i < 2 ? 0.9 : 0.1);
      labels.push_back(0);
    }
    for (int i = 0; i < 10; ++i) {
      scores.push_back(i < 1 ? 0.1 : 0.9);
      labels.push_back(1);
    }
    const HterResult r = hter(scores, labels, 0.5);
    CHECK(r.far == doctest::Approx(0.2));
    CHECK(r.frr == doctest::Approx(0.1));
    CHECK(r.hter == doctest::Approx(0.15));
  }
  SUBCASE("perfect separation gives zero") {
    const HterResult r = hter({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}, 0.5);
    CHECK(r.hter == 0.0);
  }
  SUBCASE("four-sample enumeration from the protocol") {
    const HterResult r = hter({0.9, 0.2, 0.6, 0.4}, {1, 0, 1, 0}, 0.5);
    CHECK(r.far == 0.0);
    CHECK(r.frr == 0.0);
    CHECK(r.hter == 0.0);
  }
  SUBCASE("single-class input is rejected") {
    CHECK_THROWS_AS(hter({0.5, 0.6}, {1, 1}, 0.5), std::invalid_argument);
  }
  SUBCASE("raising the threshold never lowers frr nor raises far") {
    Rng rng(61);
    std::vector<double> scores(40);
    std::vector<int> labels(40);
    for (int i = 0; i < 40; ++i) {
      scores[i] = rng.uniform();
      labels[i] = i % 2;
    }
    double prev_far = 1.0, prev_frr = 0.0;
    for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const HterResult r = hter(scores, labels, tau);
      CHECK(r.far <= prev_far + 1e-12);
      CHECK(r.frr >= prev_frr - 1e-12);
      prev_far = r.far;
      prev_frr = r.frr;
    }
  }
}

TEST_CASE("cross_domain_eval") {
  const ModelState model = eval_model();
  const LabeledDataset da = eval_domain("beta", 1);
  const LabeledDataset db = eval_domain("alpha", 2);

  SUBCASE("average is the exact unweighted mean, rows sorted by name") {
    const EvalReport report = cross_domain_eval(model, {&da, &db}, 0.5, 16);
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].domain == "alpha");
    CHECK(report.rows[1].domain == "beta");
    CHECK(report.average_hter ==
          doctest::Approx(0.5 * (report.rows[0].hter + report.rows[1].hter))
              .epsilon(1e-12));
    for (const auto& row : report.rows) {
      CHECK(row.hter == doctest::Approx(0.5 * (row.far + row.frr)).epsilon(1e-12));
      CHECK(row.n == 64);
      CHECK(row.threshold == 0.5);
    }
  }
  SUBCASE("an untrained model sits at chance level") {
    const LabeledDataset big = eval_domain("big", 9, 200);
    const EvalReport report = cross_domain_eval(model, {&big}, 0.5, 32);
    CHECK(std::abs(report.rows[0].hter - 0.5) <= 0.1);
  }
  SUBCASE("empty domain list is rejected") {
    CHECK_THROWS_AS(cross_domain_eval(model, {}, 0.5, 16), std::invalid_argument);
  }
  SUBCASE("report JSON carries the rows") {
    const EvalReport report = cross_domain_eval(model, {&da}, 0.5, 16);
    const std::string j = report_to_json(report);
    CHECK(j.find("\"beta\"") != std::string::npos);
    CHECK(j.find("average_hter") != std::string::npos);
  }
}

TEST_CASE("dynamic weight dump") {
  const ModelState model = eval_model();
  const LabeledDataset ds = eval_domain("dump", 5, 40);
  const fs::path path = fs::temp_directory_path() / "sddg_weights_test.csv";

  const int rows = dump_dynamic_weights(model, ds, path.string(), 16);
  CHECK(rows == 40);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "domain,label,w_1,w_2,w_3");
  int count = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++count;
    // columns: domain,label,w1,w2,w3 with rows on the simplex
    double w1, w2, w3;
    int label;
    char name[16];
    REQUIRE(std::sscanf(line.c_str(), "%15[^,],%d,%lf,%lf,%lf", name, &label, &w1,
                        &w2, &w3) == 5);
    CHECK(std::abs(w1 + w2 + w3 - 1.0) <= 1e-5);
    CHECK((label == 0 || label == 1));
  }
  CHECK(count == 40);
  fs::remove(path);

  const auto means = class_mean_weights(model, ds, 16);
  REQUIRE(means.size() == 2);
  REQUIRE(means[0].size() == 3);
  double sum0 = means[0][0] + means[0][1] + means[0][2];
  CHECK(sum0 == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("component grid endpoints and toggles") {
  const auto rows = component_grid_rows();
  REQUIRE(rows.size() == 5);
  CHECK((!rows[0].dynamic_block && !rows[0].im && !rows[0].meta));  // ERM baseline
  CHECK((rows[4].dynamic_block && rows[4].im && rows[4].meta));     // full SDDG

  RunConfig base = default_run_config(16, 24);
  base.backbone.feature_channels = 8;
  base.meta.mu = 0.8;
  const RunConfig erm = apply_row(base, rows[0]);
  CHECK_FALSE(erm.dynamic.enabled);
  CHECK(erm.meta.mu == 0.0);
  CHECK_FALSE(erm.meta_learning);
  const RunConfig full = apply_row(base, rows[4]);
  CHECK(full.dynamic.enabled);
  CHECK(full.meta.mu == 0.8);
  CHECK(full.meta_learning);
  const RunConfig dyn_meta = apply_row(base, rows[3]);
  CHECK(dyn_meta.dynamic.enabled);
  CHECK(dyn_meta.meta.mu == 0.0);
  CHECK(dyn_meta.meta_learning);
}

TEST_CASE("sweep csv formatting") {
  std::vector<SweepPoint> points{{0.5, 0.21, {0.2, 0.22}}, {1.0, 0.19, {0.18, 0.2}}};
  const std::string csv = sweep_csv("mu", points);
  CHECK(csv.find("mu,mean_avg_hter,seed0,seed1") == 0);
  CHECK(csv.find("0.5,0.21") != std::string::npos);
}
