// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#include "sddg/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blob assumes a little-endian host");

namespace sddg {

namespace {

struct TensorEntry {
  std::string name, group;
  std::vector<int> shape;
  std::size_t offset = 0, nbytes = 0;
};

void append_group(const ParamLayout& layout, const char* group, std::size_t& cursor,
                  std::vector<TensorEntry>& out) {
  for (const auto& e : layout.entries) {
    TensorEntry te;
    te.name = e.name;
    te.group = group;
    te.shape = e.shape;
    te.offset = cursor;
    te.nbytes = e.size * sizeof(float);
    cursor += te.nbytes;
    out.push_back(std::move(te));
  }
}

std::vector<TensorEntry> tensor_table(const ModelDef& def) {
  std::vector<TensorEntry> table;
  std::size_t cursor = 0;
  append_group(def.layout_f, "theta_F", cursor, table);
  append_group(def.layout_d, "theta_D", cursor, table);
  append_group(def.layout_c, "theta_C", cursor, table);
  append_group(def.buffers, "buffers", cursor, table);
  return table;
}

}  // namespace

void save_checkpoint(const std::string& dir, const ModelState& model,
                     const CheckpointMeta& meta) {
  fs::create_directories(dir);
  const auto table = tensor_table(model.def);

  json manifest;
  manifest["format_version"] = meta.format_version;
  manifest["step"] = meta.step;
  manifest["rng_state"] = {{"seed", meta.rng_seed}, {"step", meta.step}};
  manifest["config_hash"] = meta.config_hash;
  manifest["arch_hash"] = meta.arch_hash;
  manifest["dtype"] = "f32";
  json tensors = json::array();
  std::size_t total = 0;
  for (const auto& te : table) {
    tensors.push_back({{"name", te.name},
                       {"group", te.group},
                       {"shape", te.shape},
                       {"offset", te.offset},
                       {"nbytes", te.nbytes}});
    total += te.nbytes;
  }
  manifest["tensors"] = std::move(tensors);
  manifest["total_bytes"] = total;

  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";

  std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary);
  const auto write_vec = [&](const std::vector<float>& v) {
    blob.write(reinterpret_cast<const char*>(v.data()),
               std::streamsize(v.size() * sizeof(float)));
  };
  write_vec(model.params.f);
  write_vec(model.params.d);
  write_vec(model.params.c);
  write_vec(model.buffers);
  if (!blob) throw std::runtime_error("failed to write checkpoint blob in " + dir);
}

CheckpointMeta peek_checkpoint(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("checkpoint manifest not found in " + dir);
  const json manifest = json::parse(mf);
  CheckpointMeta meta;
  meta.format_version = manifest.at("format_version").get<int>();
  meta.step = manifest.at("step").get<std::uint64_t>();
  meta.rng_seed = manifest.at("rng_state").at("seed").get<std::uint64_t>();
  meta.config_hash = manifest.at("config_hash").get<std::string>();
  meta.arch_hash = manifest.at("arch_hash").get<std::string>();
  return meta;
}

CheckpointMeta load_checkpoint(const std::string& dir, const ModelDef& def,
                               ParamVecs<float>& params,
                               std::vector<float>& buffers) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("checkpoint manifest not found in " + dir);
  const json manifest = json::parse(mf);
  if (manifest.at("format_version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint format version");
  if (manifest.at("dtype").get<std::string>() != "f32")
    throw std::runtime_error("unsupported checkpoint dtype");

  const auto expected = tensor_table(def);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != expected.size())
    throw std::runtime_error("checkpoint tensor count does not match the model");
  std::size_t total = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& t = tensors[i];
    const auto& e = expected[i];
    if (t.at("name").get<std::string>() != e.name ||
        t.at("group").get<std::string>() != e.group ||
        t.at("shape").get<std::vector<int>>() != e.shape ||
        t.at("offset").get<std::size_t>() != e.offset ||
        t.at("nbytes").get<std::size_t>() != e.nbytes)
      throw std::runtime_error("checkpoint tensor mismatch at " + e.name);
    if (t.at("offset").get<std::size_t>() != total)
      throw std::runtime_error("checkpoint offsets do not tile the blob");
    total += e.nbytes;
  }
  if (manifest.at("total_bytes").get<std::size_t>() != total)
    throw std::runtime_error("checkpoint total_bytes mismatch");

  std::ifstream blob(fs::path(dir) / "params.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("checkpoint blob not found in " + dir);
  blob.seekg(0, std::ios::end);
  if (std::size_t(blob.tellg()) != total)
    throw std::runtime_error("checkpoint blob size does not match the manifest");
  blob.seekg(0);
  params.f.resize(def.layout_f.total);
  params.d.resize(def.layout_d.total);
  params.c.resize(def.layout_c.total);
  buffers.resize(def.buffers.total);
  const auto read_vec = [&](std::vector<float>& v) {
    blob.read(reinterpret_cast<char*>(v.data()),
              std::streamsize(v.size() * sizeof(float)));
  };
  read_vec(params.f);
  read_vec(params.d);
  read_vec(params.c);
  read_vec(buffers);
  if (!blob) throw std::runtime_error("failed to read checkpoint blob in " + dir);

  CheckpointMeta meta;
  meta.format_version = manifest.at("format_version").get<int>();
  meta.step = manifest.at("step").get<std::uint64_t>();
  meta.rng_seed = manifest.at("rng_state").at("seed").get<std::uint64_t>();
  meta.config_hash = manifest.at("config_hash").get<std::string>();
  meta.arch_hash = manifest.at("arch_hash").get<std::string>();
  return meta;
}

void load_pretrained_backbone(ModelState& model, const std::string& dir,
                              const std::string& gray_mode) {
  if (gray_mode != "average" && gray_mode != "reinit")
    throw std::invalid_argument("pretrained_gray must be 'average' or 'reinit'");
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("pretrained checkpoint not found: " + dir);
  const json manifest = json::parse(mf);
  std::ifstream blob(fs::path(dir) / "params.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("pretrained blob not found: " + dir);

  int copied = 0;
  for (const auto& t : manifest.at("tensors")) {
    if (t.at("group").get<std::string>() != "theta_F") continue;
    const auto name = t.at("name").get<std::string>();
    const ParamInfo* dst = model.def.layout_f.find(name);
    if (!dst) continue;
    const auto shape = t.at("shape").get<std::vector<int>>();
    std::size_t count = 1;
    for (int d : shape) count *= std::size_t(d);
    std::vector<float> src(count);
    blob.seekg(std::streamoff(t.at("offset").get<std::size_t>()));
    blob.read(reinterpret_cast<char*>(src.data()),
              std::streamsize(count * sizeof(float)));
    if (shape == dst->shape) {
      std::copy(src.begin(), src.end(), model.params.f.begin() + dst->offset);
      ++copied;
    } else if (shape.size() == 4 && dst->shape.size() == 4 && shape[1] == 3 &&
               dst->shape[1] == 1 && shape[0] == dst->shape[0] &&
               shape[2] == dst->shape[2] && shape[3] == dst->shape[3]) {
      if (gray_mode == "reinit") continue;  // keep the random 1-channel init
      const int cout = shape[0], kk = shape[2] * shape[3];
      for (int co = 0; co < cout; ++co)
        for (int j = 0; j < kk; ++j) {
          float s = 0.f;
          for (int ci = 0; ci < 3; ++ci) s += src[(std::size_t(co) * 3 + ci) * kk + j];
          model.params.f[dst->offset + std::size_t(co) * kk + j] = s / 3.f;
        }
      ++copied;
    }
  }
  if (copied == 0)
    throw std::runtime_error("pretrained checkpoint shares no backbone tensors");
}

}  // namespace sddg
