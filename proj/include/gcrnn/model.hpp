// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gcrnn/audio.hpp"
#include "gcrnn/autograd.hpp"
#include "gcrnn/tensor.hpp"

namespace gcrnn {

/// tagging pools (2, 2) per block; sed keeps the time axis and pools (1, 2).
enum class TaskMode { tagging, sed };
/// Clip-level pooling of frame posteriors.
enum class Pooling { attention, mean };

const char* task_mode_name(TaskMode mode);
TaskMode parse_task_mode(std::string_view name);
const char* pooling_name(Pooling pooling);
Pooling parse_pooling(std::string_view name);

/// Architecture hyperparameters. Defaults are the reference configuration:
/// 240×64 input, three gated blocks of 64 3×3 filters, Bi-GRU with 128 units,
/// 17 classes.
struct ModelConfig {
  std::size_t n_classes = 17;
  std::size_t n_frames = 240;
  std::size_t n_bins = 64;
  std::size_t filters = 64;
  std::size_t kernel = 3;
  std::size_t n_blocks = 3;
  std::size_t hidden = 128;
  TaskMode mode = TaskMode::tagging;
  FeatureKind feature = FeatureKind::log_mel;
  std::vector<std::string> class_names;

  std::size_t pool_time() const { return mode == TaskMode::tagging ? 2 : 1; }
  std::size_t pool_freq() const { return 2; }
  /// Time resolution T' after the conv stack.
  std::size_t output_frames() const;
  /// Frequency bins F' after the conv stack.
  std::size_t output_bins() const;
  /// Width of the per-frame vector fed to the GRU (F' × filters).
  std::size_t rnn_input() const { return output_bins() * filters; }

  /// key=value lines; round-trips through parse().
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
  /// FNV-1a of the architecture-defining fields.
  std::uint64_t hash() const;
  /// Throws ConfigError when the stack cannot be built.
  void validate() const;
};

/// Y = (W∗X + b) ⊙ σ(V∗X + c), followed by max pooling.
struct GatedConvBlock {
  Tensor linear_filters;  // [k×k×Cin×Cout]
  Tensor linear_bias;     // [Cout]
  Tensor gate_filters;    // [k×k×Cin×Cout]
  Tensor gate_bias;       // [Cout]
  std::size_t pool_time = 2;
  std::size_t pool_freq = 2;
};

struct GruCell {
  Tensor input_weights;      // [D×3H]
  Tensor recurrent_weights;  // [H×3H]
  Tensor bias;               // [3H]
};

struct BiGruLayer {
  GruCell forward;
  GruCell backward;
  std::size_t hidden() const { return forward.recurrent_weights.dim(0); }
};

struct DenseHead {
  Tensor weights;  // [2H×C]
  Tensor bias;     // [C]
};

struct ModelParams {
  ModelConfig config;
  std::vector<GatedConvBlock> blocks;
  BiGruLayer rnn;
  DenseHead cls_head;
  DenseHead loc_head;

  /// Every learnable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::vector<Tensor*> tensors();
  std::size_t parameter_count() const;
};

/// Glorot-uniform weights, zero biases; bitwise-deterministic per seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Per-frame outputs and the pooled clip posterior.
struct FramePosteriors {
  Tensor classification;  // O(t), [T'×C]
  Tensor localization;    // Z_loc(t), [T'×C], rows sum to 1
  Tensor combined;        // O'(t) = O(t) ⊙ Z_loc(t)
  Tensor clip_output;     // O'', [C]
};

/// Graph handles produced by a forward pass. `params` follows ModelParams::named().
struct ForwardVars {
  Var classification;
  Var localization;
  Var combined;
  Var clip_output;
  std::vector<Var> params;
};

Var glu_block(Var x, Var linear_filters, Var linear_bias, Var gate_filters, Var gate_bias,
              std::size_t pool_time, std::size_t pool_freq);
Tensor glu_block_forward(const Tensor& x, const GatedConvBlock& block);

/// Forward direction left-to-right, backward direction right-to-left, outputs
/// concatenated per frame: [T×2H].
Var bigru(Var x, const std::vector<Var>& forward_cell, const std::vector<Var>& backward_cell);
Tensor bigru_forward(const Tensor& x, const BiGruLayer& rnn);

/// Builds the full model on `graph`. features: [T×F]. When `trainable` is
/// false parameters enter the graph as constants.
ForwardVars forward_graph(Graph& graph, const Tensor& features, const ModelParams& params,
                          Pooling pooling = Pooling::attention, bool trainable = false);

FramePosteriors forward(const Tensor& features, const ModelParams& params,
                        Pooling pooling = Pooling::attention);
FramePosteriors forward(const FeatureChunk& chunk, const ModelParams& params,
                        Pooling pooling = Pooling::attention);

}  // namespace gcrnn
