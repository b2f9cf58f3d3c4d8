// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "gcrnn/errors.hpp"

namespace gcrnn {

namespace {

const char* const kClassNames[] = {
    "train_horn",       "air_horn",          "car_alarm",         "reversing_beeps",
    "ambulance_siren",  "police_car_siren",  "fire_engine_siren", "civil_defense_siren",
    "screaming",        "bicycle",           "skateboard",        "car",
    "car_passing_by",   "bus",               "truck",             "motorcycle",
    "train"};
constexpr std::size_t kMaxClasses = sizeof(kClassNames) / sizeof(kClassNames[0]);

double round_ms(double s) { return std::round(s * 1000.0) / 1000.0; }

}  // namespace

std::vector<std::string> synth_class_names(std::size_t n) {
  if (n == 0 || n > kMaxClasses) {
    throw ConfigError("synth: class count must be in [1, " + std::to_string(kMaxClasses) + "]");
  }
  return {kClassNames, kClassNames + n};
}

double synth_class_frequency(std::size_t c) {
  return 250.0 * std::pow(2.0, 0.28 * static_cast<double>(c));
}

std::vector<SynthClip> generate_corpus(const SynthConfig& config) {
  const auto names = synth_class_names(config.classes);
  if (config.clips == 0) throw ConfigError("synth: clip count must be positive");
  if (config.max_events == 0 ||
      config.max_events * config.max_event_seconds > config.clip_seconds ||
      config.min_event_seconds <= 0.0 || config.min_event_seconds > config.max_event_seconds) {
    throw ConfigError("synth: event durations do not fit in the clip");
  }
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto n_samples = static_cast<std::size_t>(std::llround(config.clip_seconds * config.sample_rate));
  const std::size_t max_events = std::min(config.max_events, config.classes);
  const double fade = 0.01;

  std::vector<SynthClip> clips;
  for (std::size_t i = 0; i < config.clips; ++i) {
    SynthClip clip;
    char id[32];
    std::snprintf(id, sizeof(id), "clip_%04zu", i);
    clip.clip_id = id;
    clip.labels.assign(config.classes, 0);
    clip.audio.sample_rate = config.sample_rate;
    clip.audio.samples.resize(n_samples);
    for (double& s : clip.audio.samples) s = config.noise_level * gauss(rng);

    const std::size_t n_events = 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(max_events)) % max_events;
    std::vector<std::size_t> classes(config.classes);
    for (std::size_t c = 0; c < classes.size(); ++c) classes[c] = c;
    std::shuffle(classes.begin(), classes.end(), rng);
    classes.resize(n_events);

    std::vector<double> durations(n_events);
    double busy = 0.0;
    for (double& d : durations) {
      d = round_ms(config.min_event_seconds +
                   unit(rng) * (config.max_event_seconds - config.min_event_seconds));
      busy += d;
    }
    std::vector<double> gaps(n_events + 1);
    double gap_sum = 0.0;
    for (double& g : gaps) {
      g = 0.05 + unit(rng);
      gap_sum += g;
    }
    const double free = config.clip_seconds - busy;
    double cursor = 0.0;
    for (std::size_t e = 0; e < n_events; ++e) {
      cursor += free * gaps[e] / gap_sum;
      const double onset = round_ms(cursor);
      const double offset = std::min(round_ms(onset + durations[e]), config.clip_seconds);
      cursor = offset;
      const std::size_t c = classes[e];
      clip.labels[c] = 1;
      clip.events.push_back(EventInterval{clip.clip_id, c, onset, offset});

      const double amp = 0.2 + 0.2 * unit(rng);
      const double f0 = synth_class_frequency(c);
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      const auto s0 = static_cast<std::size_t>(std::llround(onset * config.sample_rate));
      const auto s1 = std::min(n_samples, static_cast<std::size_t>(std::llround(offset * config.sample_rate)));
      for (std::size_t s = s0; s < s1; ++s) {
        const double t = static_cast<double>(s) / config.sample_rate;
        const double rel = t - onset;
        double env = 1.0;
        if (rel < fade) env = rel / fade;
        if (offset - t < fade) env = std::min(env, (offset - t) / fade);
        double v = std::sin(2.0 * std::numbers::pi * f0 * t + phase);
        if (2.0 * f0 < 0.45 * config.sample_rate) {
          v += 0.5 * std::sin(2.0 * std::numbers::pi * 2.0 * f0 * t + phase);
        }
        clip.audio.samples[s] += amp * env * v / 1.5;
      }
    }
    for (double& s : clip.audio.samples) s = std::clamp(s, -1.0, 1.0);
    std::sort(clip.events.begin(), clip.events.end(),
              [](const auto& a, const auto& b) { return a.onset < b.onset; });
    clips.push_back(std::move(clip));
  }
  return clips;
}

void write_corpus(const std::filesystem::path& out_dir, const std::vector<SynthClip>& clips,
                  const LabelMap& labels) {
  std::filesystem::create_directories(out_dir / "wav");
  std::vector<ClipRecord> records;
  std::vector<EventInterval> events;
  for (const auto& c : clips) {
    write_wav(out_dir / "wav" / (c.clip_id + ".wav"), c.audio);
    records.push_back(ClipRecord{c.clip_id, std::filesystem::path("features") / (c.clip_id + ".feat"),
                                 c.labels});
    events.insert(events.end(), c.events.begin(), c.events.end());
  }
  labels.save(out_dir / "labels.txt");
  write_manifest(out_dir / "manifest.csv", records, labels);
  write_events(out_dir / "events.tsv", events, labels);
}

}  // namespace gcrnn
