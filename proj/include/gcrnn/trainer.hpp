// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcrnn/adam.hpp"
#include "gcrnn/audio.hpp"
#include "gcrnn/checkpoint.hpp"
#include "gcrnn/dataset.hpp"
#include "gcrnn/eval.hpp"
#include "gcrnn/model.hpp"

namespace gcrnn {

struct TrainConfig {
  ModelConfig model;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double lr = 0.001;
  std::uint64_t seed = 0;
  Pooling pooling = Pooling::attention;
  std::size_t checkpoint_every = 1;
  bool balance = true;
  double validation_fraction = 0.1;
  double threshold = 0.5;
  /// Checkpoints and the run log go here; empty disables writing.
  std::filesystem::path out_dir;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  /// "validation", or "train" when the validation split is empty.
  std::string split;
  std::filesystem::path checkpoint;
};

struct RunLog {
  std::vector<EpochRecord> epochs;

  /// One `key=value` record per line.
  void write(const std::filesystem::path& path) const;
  std::string to_string() const;
};

struct TrainResult {
  ModelParams params;
  AdamState adam;
  NormStats norm;
  RunLog log;
  std::vector<std::filesystem::path> checkpoints;
  Split split;
};

/// Clip-level BCE averaged over the batch, and the
/// gradient of every parameter in ModelParams::named() order.
struct BatchGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

BatchGradient batch_gradient(const ModelParams& params, std::span<const Tensor* const> features,
                             std::span<const Tensor> targets, Pooling pooling);

/// Normalizes with statistics from the training split only, then runs Adam on
/// the clip-level BCE. Deterministic in (seed, corpus, config).
TrainResult train(const std::vector<ClipRecord>& corpus, const std::vector<FeatureChunk>& chunks,
                  const TrainConfig& config);
/// Same, reading each clip's feature file.
TrainResult train(const std::vector<ClipRecord>& corpus, const TrainConfig& config);

std::vector<FeatureChunk> load_chunks(const std::vector<ClipRecord>& corpus);

/// Clip posteriors O'' for each chunk. Raw chunks are normalized with the
/// checkpoint's stored stats when present.
std::vector<std::vector<double>> predict_posteriors(const Checkpoint& checkpoint,
                                                    std::span<const FeatureChunk> chunks,
                                                    Pooling pooling = Pooling::attention);

inline constexpr std::size_t kDefaultEpochFusion = 5;

/// Mean clip posterior over the last `last_k` checkpoints (all if fewer).
/// Throws FusionError when architectures differ.
std::vector<std::vector<double>> fuse_epochs(std::span<const Checkpoint> checkpoints,
                                             std::span<const FeatureChunk> chunks,
                                             std::size_t last_k = kDefaultEpochFusion,
                                             Pooling pooling = Pooling::attention);
std::vector<std::vector<double>> fuse_epochs(const std::vector<std::filesystem::path>& checkpoints,
                                             std::span<const FeatureChunk> chunks,
                                             std::size_t last_k = kDefaultEpochFusion,
                                             Pooling pooling = Pooling::attention);

/// Rows of `clip_id,p_0,...,p_{C-1}`.
struct PosteriorTable {
  std::vector<std::string> clip_ids;
  std::vector<std::vector<double>> rows;

  std::size_t classes() const { return rows.empty() ? 0 : rows.front().size(); }
};

/// Header line `clip_id,p_0,...` followed by 6-decimal fixed-point rows.
void write_posteriors(const std::filesystem::path& path, const PosteriorTable& table);
PosteriorTable read_posteriors(const std::filesystem::path& path);

/// Elementwise mean per clip. Clip sets and class counts must match; the
/// mismatch error lists the symmetric difference. Rows follow the first table.
PosteriorTable fuse_systems(std::span<const PosteriorTable> tables);

/// Tags at `threshold` for every row of a posterior table.
TagSet tags_from_posteriors(const PosteriorTable& table, double threshold = 0.5);
TagSet tags_from_records(const std::vector<ClipRecord>& records);

}  // namespace gcrnn
