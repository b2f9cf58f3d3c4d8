// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gcrnn/tensor.hpp"

namespace gcrnn {

/// Ordered class names; line number in the label file is the class id.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::string> names);

  static LabelMap load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::optional<std::size_t> find(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct ClipRecord {
  std::string clip_id;
  std::filesystem::path feature_path;
  std::vector<std::uint8_t> labels;  // multi-hot, length C

  bool has_label(std::size_t c) const { return labels.at(c) != 0; }
  std::size_t positive_count() const;
  /// Labels as a [C] tensor of 0/1.
  Tensor target() const;
};

struct CorpusOptions {
  /// Training manifests need at least one label per clip.
  bool require_labels = true;
  /// Fail when a referenced feature file is absent.
  bool require_features = true;
};

/// Parses `clip_id,feature_path,label1;label2;...`. Relative feature paths are
/// resolved against the manifest's directory. A first line starting with
/// "clip_id," is treated as a header.
std::vector<ClipRecord> load_corpus(const std::filesystem::path& manifest, const LabelMap& labels,
                                    CorpusOptions options = {});
void write_manifest(const std::filesystem::path& manifest, const std::vector<ClipRecord>& records,
                    const LabelMap& labels);

/// Stable train/validation split by FNV-1a hash of the clip id.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
Split split_by_hash(const std::vector<ClipRecord>& records, double validation_fraction);

std::uint64_t fnv1a(std::string_view text);

/// Class-uniform two-stage sampler: each batch slot draws a class uniformly
/// among non-empty classes, then a clip uniformly from that class's pool.
/// Multi-label clips sit in every positive class's pool.
class BalancedSampler {
 public:
  /// Most/least class frequency bound the sampler is held to, on average.
  static constexpr double kMaxRatio = 5.0;

  BalancedSampler(const std::vector<ClipRecord>& records, std::vector<std::size_t> subset,
                  std::size_t n_classes, std::size_t batch_size, std::uint64_t seed);
  BalancedSampler(const std::vector<ClipRecord>& records, std::size_t n_classes,
                  std::size_t batch_size, std::uint64_t seed);

  /// Indices into the records vector.
  std::vector<std::size_t> next_batch();
  /// Class each slot of the last batch was drawn through.
  const std::vector<std::size_t>& last_classes() const noexcept { return last_classes_; }
  const std::vector<std::size_t>& active_classes() const noexcept { return active_; }
  std::size_t batch_size() const noexcept { return batch_size_; }

 private:
  std::vector<std::vector<std::size_t>> pools_;
  std::vector<std::size_t> active_;
  std::vector<std::size_t> last_classes_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
};

/// Shuffle-once-per-epoch order; the epoch index is folded into the seed.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Plain shuffled iteration, the no-balancing control. Batches never straddle
/// epochs; the final batch of an epoch may be short.
class UnbalancedIterator {
 public:
  UnbalancedIterator(std::vector<std::size_t> subset, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next_batch();
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::vector<std::size_t> subset_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

/// Per-class occurrence counts over a list of clip indices (a multi-label clip
/// counts once for each positive class).
std::vector<std::size_t> class_counts(const std::vector<ClipRecord>& records,
                                      const std::vector<std::size_t>& indices,
                                      std::size_t n_classes);

/// max/min over classes with at least one clip in the corpus; +inf if a
/// populated class was never sampled.
double count_ratio(const std::vector<std::size_t>& counts,
                   const std::vector<std::size_t>& corpus_counts);

}  // namespace gcrnn
