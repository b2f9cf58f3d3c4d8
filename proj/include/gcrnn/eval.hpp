// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gcrnn/dataset.hpp"
#include "gcrnn/tensor.hpp"

namespace gcrnn {

struct TagPrediction {
  std::string clip_id;
  std::vector<double> posterior;
  std::vector<std::uint8_t> tags;
};

/// Tag k is active iff posterior_k >= threshold. threshold must lie in (0, 1).
TagPrediction tag_clip(std::string clip_id, std::span<const double> posterior,
                       double threshold = 0.5);

struct EventInterval {
  std::string clip_id;
  std::size_t class_id = 0;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds

  friend bool operator==(const EventInterval&, const EventInterval&) = default;
};

struct PostprocessConfig {
  double threshold = 0.5;
  std::size_t median_window = 11;  // frames, odd
  double min_duration = 0.2;       // seconds
  double merge_gap = 0.2;          // seconds
};

/// Per-class activity: track[t][c] >= threshold. Returned as [C][T].
std::vector<std::vector<std::uint8_t>> binarize(const Tensor& track, double threshold);
/// Binary median filter with an odd window; edges replicate the end values.
std::vector<std::uint8_t> median_filter(const std::vector<std::uint8_t>& bits, std::size_t window);

/// Binarize, median-filter, drop runs shorter than min_duration, merge runs
/// separated by less than merge_gap, convert to seconds. track: [T×C].
/// Output is sorted by onset (ties by class) and disjoint per class.
std::vector<EventInterval> extract_events(const Tensor& track, double frame_hop_seconds,
                                          const PostprocessConfig& config = {},
                                          const std::string& clip_id = "");

/// Micro-averaged scores in percent.
struct TaggingScores {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

using TagSet = std::map<std::string, std::vector<std::uint8_t>>;

/// Clip sets must match exactly (ValidationError otherwise).
TaggingScores score_tagging(const TagSet& predictions, const TagSet& references);

struct SedScores {
  double f1 = 0.0;         // percent
  double precision = 0.0;  // percent
  double recall = 0.0;     // percent
  double error_rate = 0.0;
  std::size_t substitutions = 0, deletions = 0, insertions = 0, reference_active = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

/// Segment-based scoring on fixed-length segments. Per segment and clip:
/// S = min(FN, FP), D = max(0, FN − FP), I = max(0, FP − FN);
/// ER = (ΣS + ΣD + ΣI) / ΣN, 0 when ΣN = 0.
SedScores score_sed(const std::vector<EventInterval>& predictions,
                    const std::vector<EventInterval>& references, double segment_seconds = 1.0);

/// Tab-separated `clip_id onset offset class_name`, seconds to 3 decimals.
void write_events(const std::filesystem::path& path, const std::vector<EventInterval>& events,
                  const LabelMap& labels);
std::vector<EventInterval> read_events(const std::filesystem::path& path, const LabelMap& labels);

void write_tagging_report(std::ostream& os, const TaggingScores& s);
void write_sed_report(std::ostream& os, const SedScores& s);

/// Per-clip `frame,class_name,O,Z_loc,O_prime` rows, frame-major.
void write_curves(const std::filesystem::path& path, const Tensor& classification,
                  const Tensor& localization, const Tensor& combined, const LabelMap& labels);

}  // namespace gcrnn
