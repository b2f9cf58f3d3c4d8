// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gcrnn/audio.hpp"
#include "gcrnn/dataset.hpp"
#include "gcrnn/eval.hpp"

namespace gcrnn {

/// Synthetic tone corpus: each clip holds 1–3 non-overlapping events of
/// distinct classes over white noise. Every class has its own fundamental.
struct SynthConfig {
  std::size_t clips = 40;
  std::size_t classes = 4;
  std::uint64_t seed = 0;
  int sample_rate = 16000;
  double clip_seconds = 10.0;
  double min_event_seconds = 1.0;
  double max_event_seconds = 3.0;
  std::size_t max_events = 3;
  double noise_level = 0.02;
};

struct SynthClip {
  std::string clip_id;
  AudioClip audio;
  std::vector<EventInterval> events;
  std::vector<std::uint8_t> labels;
};

/// Class names for the first `n` synthetic classes (at most 17).
std::vector<std::string> synth_class_names(std::size_t n);
/// Fundamental frequency in Hz of class `c`.
double synth_class_frequency(std::size_t c);

std::vector<SynthClip> generate_corpus(const SynthConfig& config);

/// Writes wav/<id>.wav, labels.txt, manifest.csv (feature paths point to
/// features/<id>.feat) and events.tsv with the frame-level truth.
void write_corpus(const std::filesystem::path& out_dir, const std::vector<SynthClip>& clips,
                  const LabelMap& labels);

}  // namespace gcrnn
