// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "gcrnn/tensor.hpp"

namespace gcrnn {

/// Mono waveform with samples in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Reads a PCM16 or float32 RIFF/WAVE file, downmixes to mono by averaging
/// channels, and resamples to `target_rate` by linear interpolation when the
/// file rate differs. Throws FormatError on unsupported or empty files.
AudioClip load_wav(const std::filesystem::path& path, int target_rate = 16000);

/// Writes a mono 16-bit PCM WAV. Samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

/// Linear-interpolation resampler.
std::vector<double> resample_linear(std::span<const double> samples, int from_rate,
                                    int to_rate);

enum class FeatureKind : std::uint8_t { log_mel = 0, mfcc = 1 };

const char* feature_kind_name(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view name);

struct FeatureConfig {
  int sample_rate = 16000;
  double clip_seconds = 10.0;
  std::size_t n_fft = 1024;
  std::size_t hop = 667;
  std::size_t n_frames = 240;
  std::size_t n_mels = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;
  std::size_t n_mfcc = 24;

  double frame_hop_seconds() const { return static_cast<double>(hop) / sample_rate; }
};

/// T×F feature matrix for one clip.
struct FeatureChunk {
  Tensor values;  // [T×F]
  FeatureKind kind = FeatureKind::log_mel;
  double frame_hop_seconds = 0.0;

  std::size_t frames() const { return values.dim(0); }
  std::size_t bins() const { return values.dim(1); }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK-scale filterbank, [n_mels × (n_fft/2 + 1)], peak weight 1.
Tensor mel_filterbank(const FeatureConfig& config);

/// Centre frequency of each mel band in Hz.
std::vector<double> mel_band_centers(const FeatureConfig& config);

/// Hann-windowed, centred STFT → power → mel → log(x + floor). The clip is
/// zero-padded or truncated to `clip_seconds` first. Output [n_frames × n_mels].
FeatureChunk log_mel(const AudioClip& clip, const FeatureConfig& config = {});

/// Orthonormal DCT-II of each log-mel frame, keeping the first n_mfcc terms.
FeatureChunk mfcc(const FeatureChunk& log_mel_chunk, std::size_t n_mfcc = 24);

/// Per-bin mean and standard deviation over every frame of a corpus.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  FeatureKind kind = FeatureKind::log_mel;
};

inline constexpr double kStdFloor = 1e-8;

NormStats compute_norm_stats(std::span<const FeatureChunk> chunks);
/// (x − mean) / max(std, floor), per bin.
FeatureChunk normalize(const FeatureChunk& chunk, const NormStats& stats);
/// Training mode (no stats given) computes stats from `chunks`; eval mode
/// applies `stats`. Returns the normalized chunks and the stats used.
std::pair<std::vector<FeatureChunk>, NormStats> normalize(
    std::span<const FeatureChunk> chunks, const std::optional<NormStats>& stats);
/// Eval-mode entry point: throws ConfigError when no stats are available.
std::vector<FeatureChunk> normalize_eval(std::span<const FeatureChunk> chunks,
                                         const NormStats* stats);

// Feature container: 16-byte header ("GCRNNFEAT" magic padded to 12 bytes,
// u32 version), u32 T, u32 F, u8 kind, then T·F f32, all little-endian.
void write_features(const std::filesystem::path& path, const FeatureChunk& chunk);
FeatureChunk read_features(const std::filesystem::path& path,
                           double frame_hop_seconds = FeatureConfig{}.frame_hop_seconds());
/// Stats use the same container with T = 2 (row 0 mean, row 1 std).
void write_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats read_norm_stats(const std::filesystem::path& path);

}  // namespace gcrnn
