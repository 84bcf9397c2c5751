// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "sddg/model.hpp"

namespace sddg {

/// Checkpoint directory layout:
///   manifest.json  - format version, step, rng state, tensor table, hashes
///   params.bin     - raw little-endian float32 blob; the tensor table's
///                    (offset, nbytes) entries tile it exactly
struct CheckpointMeta {
  int format_version = 1;
  std::uint64_t step = 0;
  std::uint64_t rng_seed = 0;
  std::string config_hash;
  std::string arch_hash;
};

void save_checkpoint(const std::string& dir, const ModelState& model,
                     const CheckpointMeta& meta);

/// Loads parameters and buffers into a model built from `def`. Throws if the
/// tensor table does not match the layout exactly or offsets do not tile the
/// blob.
CheckpointMeta load_checkpoint(const std::string& dir, const ModelDef& def,
                               ParamVecs<float>& params, std::vector<float>& buffers);

/// Reads just the manifest (for hash checks before committing to a load).
CheckpointMeta peek_checkpoint(const std::string& dir);

/// Copies backbone tensors by name from a checkpoint into `model`. A stored
/// 3-channel first convolution feeds a 1-channel config either by channel
/// averaging ("average") or is left at its random init ("reinit").
void load_pretrained_backbone(ModelState& model, const std::string& dir,
                              const std::string& gray_mode);

}  // namespace sddg
