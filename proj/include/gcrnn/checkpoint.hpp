// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>

#include "gcrnn/adam.hpp"
#include "gcrnn/audio.hpp"
#include "gcrnn/model.hpp"

namespace gcrnn {

/// Model weights plus optional optimizer state and the normalization stats
/// the model was trained with.
struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> adam;
  std::optional<NormStats> norm;
};

// Layout, little-endian: "GCRNNCKPT" magic padded to 12 bytes, u32 version,
// u64 config hash, u32 length + model config text, u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 rank, u32 dims, f32 values.
// Optimizer tensors are named "adam.m.<param>", "adam.v.<param>", "adam.step";
// normalization stats "norm.mean" and "norm.std".
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every value through f32 so in-memory state equals what a saved
/// checkpoint reloads to.
void round_to_storage(NormStats& stats);

}  // namespace gcrnn
