// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include "sddg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sddg/rng.hpp"

using nlohmann::json;

namespace sddg {

namespace {

/// Object reader that rejects unknown keys.
class StrictObj {
 public:
  StrictObj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const json* get(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void read(const char* key, T& out) {
    if (const json* v = get(key)) {
      try {
        out = v->get<T>();
      } catch (const json::exception&) {
        throw ConfigError(path_ + "." + key + ": wrong type");
      }
    }
  }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
  }

  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

TextureParams parse_texture(const json& j, const std::string& path) {
  StrictObj o(j, path);
  TextureParams t;
  std::string pattern = pattern_name(t.pattern);
  o.read("pattern", pattern);
  t.pattern = parse_pattern(pattern);
  o.read("base_freq", t.base_freq);
  o.read("orientation", t.orientation);
  o.read("amplitude", t.amplitude);
  o.finish();
  return t;
}

json texture_json(const TextureParams& t) {
  return {{"pattern", pattern_name(t.pattern)},
          {"base_freq", t.base_freq},
          {"orientation", t.orientation},
          {"amplitude", t.amplitude}};
}

DomainStyle parse_style(const json& j, const std::string& path) {
  StrictObj o(j, path);
  DomainStyle s;
  o.read("contrast", s.contrast);
  o.read("brightness", s.brightness);
  o.read("blur_sigma", s.blur_sigma);
  o.read("noise_sigma", s.noise_sigma);
  o.read("tilt", s.tilt);
  o.finish();
  return s;
}

json style_json(const DomainStyle& s) {
  return {{"contrast", s.contrast},
          {"brightness", s.brightness},
          {"blur_sigma", s.blur_sigma},
          {"noise_sigma", s.noise_sigma},
          {"tilt", s.tilt}};
}

DomainSpec parse_domain(const json& j, const std::string& path, const DataConfig& dc) {
  StrictObj o(j, path);
  DomainSpec d;
  d.size = dc.per_domain;
  d.image_size = dc.image_size;
  o.read("name", d.name);
  if (d.name.empty()) throw ConfigError(path + ": domain name required");
  o.read("size", d.size);
  o.read("seed", d.seed);
  if (const json* v = o.get("class0"))
    d.class0_texture = parse_texture(*v, path + ".class0");
  if (const json* v = o.get("class1"))
    d.class1_texture = parse_texture(*v, path + ".class1");
  if (const json* v = o.get("style")) d.style = parse_style(*v, path + ".style");
  o.finish();
  return d;
}

json domain_json(const DomainSpec& d) {
  return {{"name", d.name},
          {"size", d.size},
          {"seed", d.seed},
          {"class0", texture_json(d.class0_texture)},
          {"class1", texture_json(d.class1_texture)},
          {"style", style_json(d.style)}};
}

void validate(const RunConfig& cfg) {
  const auto& m = cfg.meta;
  if (!(m.alpha >= 0)) throw ConfigError("meta.alpha must be >= 0");
  if (!(m.beta > 0)) throw ConfigError("meta.beta must be > 0");
  if (!(m.mu >= 0)) throw ConfigError("meta.mu must be >= 0");
  if (!(m.eta >= 0 && m.eta <= 1)) throw ConfigError("meta.eta must be in [0,1]");
  if (m.steps < 0) throw ConfigError("meta.steps must be >= 0");
  if (m.batch_size < 1) throw ConfigError("meta.batch_size must be >= 1");
  if (cfg.eval.threshold < 0 || cfg.eval.threshold > 1)
    throw ConfigError("eval.threshold must be in [0,1]");
  if (cfg.eval.batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
  if (cfg.perturb.pool_size < 1) throw ConfigError("perturb.pool_size must be >= 1");
  if (cfg.meta.mu > 0 && !cfg.dynamic.enabled)
    throw ConfigError("the IM loss needs the dynamic block (set meta.mu to 0)");
  if (cfg.meta_learning && cfg.perturb_as_augmentation)
    throw ConfigError("perturb_as_augmentation applies only with meta_learning off");
  if (!cfg.data.domains.empty()) {
    bool found = false;
    std::set<std::string> names;
    for (const auto& d : cfg.data.domains) {
      if (!names.insert(d.name).second)
        throw ConfigError("duplicate domain name: " + d.name);
      found |= d.name == cfg.data.train_domain;
    }
    if (!found) throw ConfigError("data.train_domain does not name a domain");
  }
  try {
    build_model_def(cfg.backbone, cfg.dynamic);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

RunConfig default_run_config(int image_size, int per_domain) {
  RunConfig cfg;
  cfg.backbone.image_size = image_size;
  cfg.data.image_size = image_size;
  cfg.data.per_domain = per_domain;
  cfg.data.train_domain = "domA";

  TextureParams rings;
  rings.pattern = TexturePattern::rings;
  rings.base_freq = 3.0;
  rings.orientation = 0.35;
  rings.amplitude = 0.8;
  TextureParams dots;
  dots.pattern = TexturePattern::dots;
  dots.base_freq = 6.0;
  dots.orientation = 0.6;
  dots.amplitude = 0.8;

  const auto make_domain = [&](const std::string& name, std::uint64_t seed,
                               DomainStyle style) {
    DomainSpec d;
    d.name = name;
    d.seed = seed;
    d.size = per_domain;
    d.image_size = image_size;
    d.class0_texture = rings;
    d.class1_texture = dots;
    d.style = style;
    return d;
  };
  cfg.data.domains = {
      make_domain("domA", 101, {1.0, 0.0, 0.0, 0.03, 0.0}),
      make_domain("domB", 202, {0.55, 0.17, 0.75, 0.055, -0.32}),
      make_domain("domC", 303, {1.65, -0.13, 0.0, 0.11, 0.52}),
      make_domain("domD", 404, {0.67, -0.18, 0.95, 0.035, 0.0}),
  };
  return cfg;
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
  RunConfig cfg;
  StrictObj root(j, "config");
  root.read("run_name", cfg.run_name);
  root.read("out_dir", cfg.out_dir);

  if (const json* v = root.get("backbone")) {
    StrictObj o(*v, "backbone");
    std::string arch = std::string(arch_name(cfg.backbone.arch));
    o.read("arch", arch);
    cfg.backbone.arch = parse_arch(arch);
    o.read("in_channels", cfg.backbone.in_channels);
    o.read("feature_channels", cfg.backbone.feature_channels);
    o.read("image_size", cfg.backbone.image_size);
    o.read("pretrained_path", cfg.backbone.pretrained_path);
    o.read("pretrained_gray", cfg.backbone.pretrained_gray);
    o.finish();
  }
  if (const json* v = root.get("dynamic")) {
    StrictObj o(*v, "dynamic");
    o.read("enabled", cfg.dynamic.enabled);
    o.read("k", cfg.dynamic.k);
    o.read("reduction", cfg.dynamic.reduction);
    o.read("in_affine", cfg.dynamic.in_affine);
    o.read("in_eps", cfg.dynamic.in_eps);
    o.finish();
  }
  if (const json* v = root.get("meta")) {
    StrictObj o(*v, "meta");
    o.read("alpha", cfg.meta.alpha);
    o.read("beta", cfg.meta.beta);
    o.read("mu", cfg.meta.mu);
    o.read("eta", cfg.meta.eta);
    o.read("second_order", cfg.meta.second_order);
    o.read("steps", cfg.meta.steps);
    o.read("batch_size", cfg.meta.batch_size);
    o.read("seed", cfg.meta.seed);
    o.finish();
  }
  root.read("meta_learning", cfg.meta_learning);
  root.read("perturb_as_augmentation", cfg.perturb_as_augmentation);
  if (const json* v = root.get("perturb")) {
    StrictObj o(*v, "perturb");
    std::string mode =
        cfg.perturb.lambda_mode == LambdaMode::per_image ? "per_image" : "per_batch";
    o.read("lambda_mode", mode);
    if (mode == "per_image")
      cfg.perturb.lambda_mode = LambdaMode::per_image;
    else if (mode == "per_batch")
      cfg.perturb.lambda_mode = LambdaMode::per_batch;
    else
      throw ConfigError("perturb.lambda_mode must be per_image or per_batch");
    o.read("natural_pool", cfg.perturb.natural_pool);
    o.read("pool_size", cfg.perturb.pool_size);
    o.read("seed", cfg.perturb.seed);
    o.finish();
  }
  if (const json* v = root.get("data")) {
    StrictObj o(*v, "data");
    o.read("root", cfg.data.root);
    o.read("image_size", cfg.data.image_size);
    o.read("per_domain", cfg.data.per_domain);
    o.read("train_domain", cfg.data.train_domain);
    if (const json* doms = o.get("domains")) {
      if (!doms->is_array()) throw ConfigError("data.domains must be an array");
      cfg.data.domains.clear();
      for (std::size_t i = 0; i < doms->size(); ++i)
        cfg.data.domains.push_back(parse_domain(
            (*doms)[i], "data.domains[" + std::to_string(i) + "]", cfg.data));
    }
    o.finish();
  }
  if (const json* v = root.get("eval")) {
    StrictObj o(*v, "eval");
    o.read("threshold", cfg.eval.threshold);
    o.read("batch_size", cfg.eval.batch_size);
    o.finish();
  }
  if (const json* v = root.get("train")) {
    StrictObj o(*v, "train");
    o.read("checkpoint_every", cfg.train.checkpoint_every);
    o.read("crop", cfg.train.crop);
    o.read("bn_momentum", cfg.train.bn_momentum);
    o.finish();
  }
  root.finish();
  validate(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  json j;
  j["run_name"] = cfg.run_name;
  j["out_dir"] = cfg.out_dir;
  j["backbone"] = {{"arch", std::string(arch_name(cfg.backbone.arch))},
                   {"in_channels", cfg.backbone.in_channels},
                   {"feature_channels", cfg.backbone.feature_channels},
                   {"image_size", cfg.backbone.image_size},
                   {"pretrained_path", cfg.backbone.pretrained_path},
                   {"pretrained_gray", cfg.backbone.pretrained_gray}};
  j["dynamic"] = {{"enabled", cfg.dynamic.enabled},
                  {"k", cfg.dynamic.k},
                  {"reduction", cfg.dynamic.reduction},
                  {"in_affine", cfg.dynamic.in_affine},
                  {"in_eps", cfg.dynamic.in_eps}};
  j["meta"] = {{"alpha", cfg.meta.alpha},     {"beta", cfg.meta.beta},
               {"mu", cfg.meta.mu},           {"eta", cfg.meta.eta},
               {"second_order", cfg.meta.second_order},
               {"steps", cfg.meta.steps},     {"batch_size", cfg.meta.batch_size},
               {"seed", cfg.meta.seed}};
  j["meta_learning"] = cfg.meta_learning;
  j["perturb_as_augmentation"] = cfg.perturb_as_augmentation;
  j["perturb"] = {
      {"lambda_mode",
       cfg.perturb.lambda_mode == LambdaMode::per_image ? "per_image" : "per_batch"},
      {"natural_pool", cfg.perturb.natural_pool},
      {"pool_size", cfg.perturb.pool_size},
      {"seed", cfg.perturb.seed}};
  json domains = json::array();
  for (const auto& d : cfg.data.domains) domains.push_back(domain_json(d));
  j["data"] = {{"root", cfg.data.root},
               {"image_size", cfg.data.image_size},
               {"per_domain", cfg.data.per_domain},
               {"train_domain", cfg.data.train_domain},
               {"domains", std::move(domains)}};
  j["eval"] = {{"threshold", cfg.eval.threshold},
               {"batch_size", cfg.eval.batch_size}};
  j["train"] = {{"checkpoint_every", cfg.train.checkpoint_every},
                {"crop", cfg.train.crop},
                {"bn_momentum", cfg.train.bn_momentum}};
  return j.dump(2);
}

void apply_override(RunConfig& cfg, const std::string& dotted_path,
                    const std::string& value) {
  json j = json::parse(dump_run_config(cfg));
  json* node = &j;
  std::string rest = dotted_path;
  while (true) {
    const auto dot = rest.find('.');
    const std::string key = rest.substr(0, dot);
    const bool last = dot == std::string::npos;
    json* next = nullptr;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (...) {
        throw ConfigError("override path indexes an array with '" + key + "'");
      }
      if (idx >= node->size()) throw ConfigError("override index out of range: " + key);
      next = &(*node)[idx];
    } else if (node->is_object()) {
      const auto it = node->find(key);
      if (it == node->end())
        throw ConfigError("override path not found: " + dotted_path);
      next = &*it;
    } else {
      throw ConfigError("override path descends into a scalar: " + dotted_path);
    }
    if (last) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::exception&) {
        parsed = value;  // bare strings are fine
      }
      *next = std::move(parsed);
      break;
    }
    node = next;
    rest = rest.substr(dot + 1);
  }
  cfg = parse_run_config(j.dump());
}

std::string config_hash(const RunConfig& cfg) {
  const json j = json::parse(dump_run_config(cfg));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::string arch_hash(const RunConfig& cfg) {
  const json j = json::parse(dump_run_config(cfg));
  json subset;
  subset["backbone"] = j.at("backbone");
  subset["dynamic"] = j.at("dynamic");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(subset.dump())));
  return buf;
}

PerturbConfig perturb_config(const RunConfig& cfg) {
  PerturbConfig pc;
  pc.eta = cfg.meta.eta;
  pc.lambda_mode = cfg.perturb.lambda_mode;
  pc.seed = cfg.perturb.seed != 0 ? cfg.perturb.seed
                                  : hash_combine(cfg.meta.seed, fnv1a("perturb"));
  return pc;
}

}  // namespace sddg
