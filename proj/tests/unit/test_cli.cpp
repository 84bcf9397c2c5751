// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sddg/config.hpp"
#include "sddg/image_io.hpp"

using namespace sddg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliFixture {
  fs::path dir;
  fs::path config_path;

  CliFixture() {
    dir = fs::temp_directory_path() / "sddg_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    RunConfig cfg = default_run_config(16, 24);
    cfg.backbone.feature_channels = 8;
    cfg.dynamic.k = 2;
    cfg.meta.alpha = 0.02;
    cfg.meta.beta = 0.02;
    cfg.meta.steps = 2;
    cfg.meta.batch_size = 4;
    cfg.meta.seed = 5;
    cfg.perturb.pool_size = 8;
    cfg.train.checkpoint_every = 1;
    cfg.out_dir = (dir / "run").string();
    cfg.data.root = (dir / "data").string();
    for (auto& d : cfg.data.domains) {
      d.size = 24;
      d.image_size = 16;
    }
    config_path = dir / "config.json";
    std::ofstream(config_path) << dump_run_config(cfg) << "\n";
  }
  ~CliFixture() { fs::remove_all(dir); }

  int run(const std::string& args, std::string* output = nullptr) const {
    const fs::path log = dir / "cmd.log";
    const std::string cmd = std::string(SDDG_CLI_PATH) + " " + args + " > " +
                            log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) {
      std::ifstream in(log);
      std::stringstream ss;
      ss << in.rdbuf();
      *output = ss.str();
    }
    return WEXITSTATUS(status);
  }

  std::string cfg_arg() const { return "--config " + config_path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli gen-data") {
  CliFixture fx;
  SUBCASE("generates all domains; --force regeneration is byte-identical") {
    CHECK(fx.run("gen-data " + fx.cfg_arg()) == 0);
    for (const char* name : {"domA", "domB", "domC", "domD"})
      CHECK(fs::exists(fx.dir / "data" / name / "index.json"));
    const std::string index_a = slurp(fx.dir / "data/domA/index.json");
    const std::string png_a = slurp(fx.dir / "data/domA/images/00000.png");

    std::string out;
    CHECK(fx.run("gen-data " + fx.cfg_arg(), &out) == 1);  // refuses without --force
    CHECK(out.find("--force") != std::string::npos);

    CHECK(fx.run("gen-data " + fx.cfg_arg() + " --force") == 0);
    CHECK(slurp(fx.dir / "data/domA/index.json") == index_a);
    CHECK(slurp(fx.dir / "data/domA/images/00000.png") == png_a);

    // 24 samples per domain on disk
    int files = 0;
    for ([[maybe_unused]] const auto& e :
         fs::directory_iterator(fx.dir / "data/domA/images"))
      ++files;
    CHECK(files == 24);
  }
  SUBCASE("degenerate spec exits non-zero with a message") {
    std::string out;
    const int code = fx.run(
        "gen-data " + fx.cfg_arg() +
            " --set data.domains.0.class1='{\"pattern\":\"rings\",\"base_freq\":3.0,"
            "\"orientation\":0.35,\"amplitude\":0.8}'",
        &out);
    CHECK(code == 1);
    CHECK(out.find("identical") != std::string::npos);
  }
}

TEST_CASE("cli train, eval, dump-weights") {
  CliFixture fx;

  SUBCASE("steps=1 trace schema") {
    std::string out;
    const int code =
        fx.run("train " + fx.cfg_arg() + " --set meta.steps=1", &out);
    CHECK(code == 0);
    std::ifstream trace(fx.dir / "run/trace.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(trace, line)) {
      ++lines;
      const json j = json::parse(line);
      for (const char* key : {"step", "cls_s", "ent", "div", "im", "cls_s_plus"})
        CHECK(j.contains(key));
    }
    CHECK(lines == 1);
    CHECK(fs::exists(fx.dir / "run/checkpoints/final/manifest.json"));
    CHECK(fs::exists(fx.dir / "run/checkpoints/final/params.bin"));
  }

  SUBCASE("full two-step run, then eval and weight dumps") {
    // materialize the domains first so training exercises the on-disk layout
    REQUIRE(fx.run("gen-data " + fx.cfg_arg()) == 0);
    REQUIRE(fx.run("train " + fx.cfg_arg()) == 0);
    const std::string ckpt = (fx.dir / "run/checkpoints/final").string();

    std::string out;
    CHECK(fx.run("eval " + fx.cfg_arg() + " --checkpoint " + ckpt, &out) == 0);
    CHECK(fs::exists(fx.dir / "run/eval_report.json"));
    const json report = json::parse(slurp(fx.dir / "run/eval_report.json"));
    CHECK(report.at("domains").size() == 3);  // three unseen domains

    CHECK(fx.run("eval " + fx.cfg_arg() + " --checkpoint " + ckpt +
                 " --dump-weights") == 0);
    CHECK(fs::exists(fx.dir / "run/weights_domB.csv"));

    CHECK(fx.run("dump-weights " + fx.cfg_arg() + " --checkpoint " + ckpt +
                 " --domain domA --out " + (fx.dir / "w.csv").string()) == 0);
    CHECK(fs::exists(fx.dir / "w.csv"));

    // architecture mismatch is refused without --allow-mismatch
    std::string mm;
    CHECK(fx.run("eval " + fx.cfg_arg() + " --set dynamic.k=3 --checkpoint " + ckpt,
                 &mm) == 1);
    CHECK(mm.find("hash") != std::string::npos);
  }

  SUBCASE("missing checkpoint exits non-zero") {
    std::string out;
    CHECK(fx.run("eval " + fx.cfg_arg() + " --checkpoint " +
                     (fx.dir / "nope").string(),
                 &out) == 1);
  }

  SUBCASE("ablate flags collapse to the ERM path") {
    std::string out;
    const int code = fx.run("train " + fx.cfg_arg() +
                                " --set meta.steps=1 --ablate no-meta no-im "
                                "no-dynamic",
                            &out);
    CHECK(code == 0);
    std::ifstream trace(fx.dir / "run/trace.jsonl");
    std::string line;
    std::getline(trace, line);
    const json j = json::parse(line);
    CHECK(double(j.at("im")) == 0.0);
    CHECK(double(j.at("cls_s_plus")) == 0.0);  // no second batch in plain ERM
  }

  SUBCASE("resume continues from a checkpoint to the same final blob") {
    REQUIRE(fx.run("train " + fx.cfg_arg()) == 0);
    const std::string final_blob = slurp(fx.dir / "run/checkpoints/final/params.bin");
    REQUIRE(fx.run("train " + fx.cfg_arg() + " --resume " +
                   (fx.dir / "run/checkpoints/step_000001").string()) == 0);
    CHECK(slurp(fx.dir / "run/checkpoints/final/params.bin") == final_blob);
  }

  SUBCASE("divergent config exits with code 2 and keeps checkpoints") {
    std::string out;
    const int code = fx.run("train " + fx.cfg_arg() +
                                " --set meta.beta=1e7 --set meta.steps=30",
                            &out);
    CHECK(code == 2);
    CHECK(out.find("divergence") != std::string::npos);
  }
}

TEST_CASE("cli ablate grid and sweep") {
  CliFixture fx;
  const std::string out = (fx.dir / "ablation").string();

  SUBCASE("component grid emits table artifacts") {
    REQUIRE(fx.run("ablate " + fx.cfg_arg() + " --seeds 1 --out " + out) == 0);
    for (const char* name : {"table.txt", "table.csv", "table.json"})
      CHECK(fs::exists(fs::path(out) / name));
    const json table = json::parse(slurp(fs::path(out) / "table.json"));
    CHECK(table.at("rows").size() == 5);
    CHECK(table.contains("config_hash"));
  }
  SUBCASE("mu sweep emits the curve artifact") {
    REQUIRE(fx.run("ablate " + fx.cfg_arg() + " --seeds 1 --sweep mu --out " + out) ==
            0);
    CHECK(fs::exists(fs::path(out) / "sweep_mu.csv"));
    const json sj = json::parse(slurp(fs::path(out) / "sweep_mu.json"));
    CHECK(sj.at("points").size() == 5);
    std::ifstream in(fs::path(out) / "sweep_mu.csv");
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 6);
  }
}

TEST_CASE("cli perturb-preview") {
  CliFixture fx;
  const std::string preview_dir = (fx.dir / "preview").string();

  SUBCASE("writes n triplets") {
    CHECK(fx.run("perturb-preview " + fx.cfg_arg() + " -n 3 --out " + preview_dir) ==
          0);
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(preview_dir))
      if (e.path().extension() == ".png") ++pngs;
    CHECK(pngs == 9);
  }
  SUBCASE("eta=0 reproduces the source up to 8-bit quantization") {
    CHECK(fx.run("perturb-preview " + fx.cfg_arg() + " -n 2 --set meta.eta=0 --out " +
                 preview_dir) == 0);
    for (int i = 0; i < 2; ++i) {
      const Image src = read_png_gray(preview_dir + "/preview_" + std::to_string(i) +
                                      "_source.png");
      const Image mix = read_png_gray(preview_dir + "/preview_" + std::to_string(i) +
                                      "_perturbed.png");
      for (std::size_t j = 0; j < src.v.size(); ++j)
        CHECK(std::abs(src.v[j] - mix.v[j]) <= 1.0 / 255 + 1e-9);
    }
  }
  SUBCASE("eta=1 produces a visible difference") {
    CHECK(fx.run("perturb-preview " + fx.cfg_arg() + " -n 3 --set meta.eta=1 --out " +
                 preview_dir) == 0);
    double total_diff = 0;
    for (int i = 0; i < 3; ++i) {
      const Image src = read_png_gray(preview_dir + "/preview_" + std::to_string(i) +
                                      "_source.png");
      const Image mix = read_png_gray(preview_dir + "/preview_" + std::to_string(i) +
                                      "_perturbed.png");
      for (std::size_t j = 0; j < src.v.size(); ++j)
        total_diff += std::abs(src.v[j] - mix.v[j]);
    }
    CHECK(total_diff > 0.0);
  }
}
