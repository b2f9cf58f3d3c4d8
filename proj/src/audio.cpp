// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "binary_io.hpp"
#include "gcrnn/errors.hpp"

namespace gcrnn {

using detail::get_le;
using detail::put_le;

namespace {

constexpr std::uint16_t kWavePcm = 1;
constexpr std::uint16_t kWaveFloat = 3;
constexpr std::uint16_t kWaveExtensible = 0xFFFE;

constexpr const char* kFeatureMagic = "GCRNNFEAT";
constexpr std::uint32_t kFeatureVersion = 1;

std::string read_tag(std::istream& is, const std::string& what) {
  char tag[4];
  if (!is.read(tag, 4)) throw FormatError("truncated " + what);
  return std::string(tag, 4);
}

}  // namespace

AudioClip load_wav(const std::filesystem::path& path, int target_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open wav file " + path.string());
  const std::string what = "wav file " + path.string();
  if (read_tag(in, what) != "RIFF") throw FormatError(what + ": missing RIFF header");
  get_le<std::uint32_t>(in, what);
  if (read_tag(in, what) != "WAVE") throw FormatError(what + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<char> payload;
  bool have_data = false;
  while (!have_data) {
    if (in.peek() == std::char_traits<char>::eof()) break;
    const std::string id = read_tag(in, what);
    const std::uint32_t size = get_le<std::uint32_t>(in, what);
    if (id == "fmt ") {
      if (size < 16) throw FormatError(what + ": short fmt chunk");
      format = get_le<std::uint16_t>(in, what);
      channels = get_le<std::uint16_t>(in, what);
      rate = get_le<std::uint32_t>(in, what);
      get_le<std::uint32_t>(in, what);  // byte rate
      get_le<std::uint16_t>(in, what);  // block align
      bits = get_le<std::uint16_t>(in, what);
      std::uint32_t consumed = 16;
      if (format == kWaveExtensible && size >= 26) {
        get_le<std::uint16_t>(in, what);  // cbSize
        get_le<std::uint16_t>(in, what);  // valid bits
        get_le<std::uint32_t>(in, what);  // channel mask
        format = get_le<std::uint16_t>(in, what);  // first two bytes of the sub-format GUID
        consumed = 26;
      }
      in.ignore(static_cast<std::streamsize>(size - consumed + (size & 1)));
      have_fmt = true;
    } else if (id == "data") {
      payload.resize(size);
      if (!in.read(payload.data(), static_cast<std::streamsize>(size))) {
        // Tolerate a truncated final chunk by keeping what was read.
        payload.resize(static_cast<std::size_t>(in.gcount()));
      }
      have_data = true;
    } else {
      in.ignore(static_cast<std::streamsize>(size + (size & 1)));
    }
  }
  if (!have_fmt) throw FormatError(what + ": missing fmt chunk");
  if (!have_data) throw FormatError(what + ": missing data chunk");
  if (channels == 0 || rate == 0) throw FormatError(what + ": zero channels or sample rate");

  const bool pcm16 = format == kWavePcm && bits == 16;
  const bool float32 = format == kWaveFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw FormatError(what + ": unsupported encoding (format " + std::to_string(format) +
                      ", " + std::to_string(bits) + " bits); expected PCM16 or float32");
  }
  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = payload.size() / (bytes_per_sample * channels);
  if (frames == 0) throw FormatError(what + ": no audio samples");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = bytes + (f * channels + c) * bytes_per_sample;
      if (pcm16) {
        const auto raw = static_cast<std::int16_t>(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
        acc += raw / 32768.0;
      } else {
        const std::uint32_t raw = static_cast<std::uint32_t>(p[0]) |
                                  (static_cast<std::uint32_t>(p[1]) << 8) |
                                  (static_cast<std::uint32_t>(p[2]) << 16) |
                                  (static_cast<std::uint32_t>(p[3]) << 24);
        acc += std::clamp(static_cast<double>(std::bit_cast<float>(raw)), -1.0, 1.0);
      }
    }
    clip.samples[f] = acc / channels;
  }
  if (target_rate > 0 && clip.sample_rate != target_rate) {
    clip.samples = resample_linear(clip.samples, clip.sample_rate, target_rate);
    clip.sample_rate = target_rate;
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write wav file " + path.string());
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  const auto rate = static_cast<std::uint32_t>(clip.sample_rate);
  out.write("RIFF", 4);
  put_le<std::uint32_t>(out, 36 + 2 * n);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, kWavePcm);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, rate);
  put_le<std::uint32_t>(out, rate * 2);
  put_le<std::uint16_t>(out, 2);
  put_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  put_le<std::uint32_t>(out, 2 * n);
  for (double s : clip.samples) {
    const double q = std::round(std::clamp(s, -1.0, 1.0) * 32767.0);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  if (!out) throw DataError("failed writing wav file " + path.string());
}

std::vector<double> resample_linear(std::span<const double> samples, int from_rate,
                                    int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw ConfigError("resample: rates must be positive");
  if (samples.empty() || from_rate == to_rate) return {samples.begin(), samples.end()};
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(samples.size()) * to_rate / from_rate));
  std::vector<double> out(std::max<std::size_t>(n_out, 1));
  const double step = static_cast<double>(from_rate) / to_rate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto i0 = static_cast<std::size_t>(pos);
    if (i0 + 1 >= samples.size()) {
      out[i] = samples.back();
      continue;
    }
    const double frac = pos - static_cast<double>(i0);
    out[i] = samples[i0] * (1.0 - frac) + samples[i0 + 1] * frac;
  }
  return out;
}

const char* feature_kind_name(FeatureKind kind) {
  return kind == FeatureKind::mfcc ? "mfcc" : "log_mel";
}

FeatureKind parse_feature_kind(std::string_view name) {
  if (name == "log_mel" || name == "logmel") return FeatureKind::log_mel;
  if (name == "mfcc") return FeatureKind::mfcc;
  throw ConfigError("unknown feature kind '" + std::string(name) + "' (log_mel|mfcc)");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_points_hz(const FeatureConfig& config) {
  const double lo = hz_to_mel(config.fmin);
  const double hi = hz_to_mel(config.fmax);
  std::vector<double> pts(config.n_mels + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(config.n_mels + 1));
  }
  return pts;
}

}  // namespace

std::vector<double> mel_band_centers(const FeatureConfig& config) {
  const auto pts = mel_points_hz(config);
  return {pts.begin() + 1, pts.end() - 1};
}

Tensor mel_filterbank(const FeatureConfig& config) {
  const std::size_t n_bins = config.n_fft / 2 + 1;
  const auto pts = mel_points_hz(config);
  Tensor fb({config.n_mels, n_bins});
  for (std::size_t m = 0; m < config.n_mels; ++m) {
    const double lo = pts[m], centre = pts[m + 1], hi = pts[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * config.sample_rate / static_cast<double>(config.n_fft);
      const double up = (f - lo) / (centre - lo);
      const double down = (hi - f) / (hi - centre);
      fb.at(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

FeatureChunk log_mel(const AudioClip& clip, const FeatureConfig& config) {
  if (clip.sample_rate != config.sample_rate) {
    throw ConfigError("log_mel: clip sample rate " + std::to_string(clip.sample_rate) +
                      " Hz differs from configured " + std::to_string(config.sample_rate) + " Hz");
  }
  const auto clip_len = static_cast<std::size_t>(std::llround(config.clip_seconds * config.sample_rate));
  const std::size_t n_fft = config.n_fft;
  const std::size_t half = n_fft / 2;
  const std::size_t n_bins = half + 1;

  // Centred frames: clip padded with n_fft/2 zeros on each side.
  std::vector<double> padded(clip_len + n_fft, 0.0);
  const std::size_t copy_len = std::min(clip_len, clip.samples.size());
  std::copy_n(clip.samples.begin(), copy_len, padded.begin() + static_cast<std::ptrdiff_t>(half));

  const std::size_t available = 1 + clip_len / config.hop;
  if (available < config.n_frames) {
    throw ConfigError("log_mel: " + std::to_string(config.clip_seconds) + " s with hop " +
                      std::to_string(config.hop) + " gives only " + std::to_string(available) +
                      " frames, need " + std::to_string(config.n_frames));
  }

  std::vector<double> window(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                      static_cast<double>(n_fft));
  }
  const Tensor fb = mel_filterbank(config);

  Eigen::FFT<double> fft;
  std::vector<double> frame(n_fft);
  std::vector<std::complex<double>> spectrum;
  std::vector<double> power(n_bins);
  FeatureChunk chunk{Tensor({config.n_frames, config.n_mels}), FeatureKind::log_mel,
                     config.frame_hop_seconds()};
  for (std::size_t t = 0; t < config.n_frames; ++t) {
    const double* src = padded.data() + t * config.hop;
    for (std::size_t i = 0; i < n_fft; ++i) frame[i] = src[i] * window[i];
    fft.fwd(spectrum, frame);
    for (std::size_t k = 0; k < n_bins; ++k) power[k] = std::norm(spectrum[k]);
    for (std::size_t m = 0; m < config.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += fb.at(m, k) * power[k];
      chunk.values.at(t, m) = std::log(e + config.log_floor);
    }
  }
  return chunk;
}

FeatureChunk mfcc(const FeatureChunk& log_mel_chunk, std::size_t n_mfcc) {
  if (log_mel_chunk.kind != FeatureKind::log_mel) {
    throw ValidationError("mfcc: input must be a log_mel chunk, got " +
                          std::string(feature_kind_name(log_mel_chunk.kind)));
  }
  const std::size_t T = log_mel_chunk.frames();
  const std::size_t M = log_mel_chunk.bins();
  if (n_mfcc == 0 || n_mfcc > M) {
    throw ConfigError("mfcc: cannot keep " + std::to_string(n_mfcc) + " of " +
                      std::to_string(M) + " coefficients");
  }
  // Orthonormal DCT-II basis.
  Tensor basis({n_mfcc, M});
  for (std::size_t k = 0; k < n_mfcc; ++k) {
    const double norm = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(M));
    for (std::size_t m = 0; m < M; ++m) {
      basis.at(k, m) = norm * std::cos(std::numbers::pi * static_cast<double>(k) *
                                       (2.0 * static_cast<double>(m) + 1.0) /
                                       (2.0 * static_cast<double>(M)));
    }
  }
  FeatureChunk out{Tensor({T, n_mfcc}), FeatureKind::mfcc, log_mel_chunk.frame_hop_seconds};
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < n_mfcc; ++k) {
      double s = 0.0;
      for (std::size_t m = 0; m < M; ++m) s += basis.at(k, m) * log_mel_chunk.values.at(t, m);
      out.values.at(t, k) = s;
    }
  }
  return out;
}

NormStats compute_norm_stats(std::span<const FeatureChunk> chunks) {
  if (chunks.empty()) throw DataError("normalize: no chunks to compute statistics from");
  const std::size_t F = chunks.front().bins();
  NormStats stats;
  stats.kind = chunks.front().kind;
  stats.mean.assign(F, 0.0);
  stats.std.assign(F, 0.0);
  double count = 0.0;
  for (const auto& c : chunks) {
    if (c.bins() != F) {
      throw DimensionError("normalize: chunks have " + std::to_string(F) + " and " +
                           std::to_string(c.bins()) + " bins");
    }
    for (std::size_t t = 0; t < c.frames(); ++t)
      for (std::size_t f = 0; f < F; ++f) stats.mean[f] += c.values.at(t, f);
    count += static_cast<double>(c.frames());
  }
  for (double& m : stats.mean) m /= count;
  // Two-pass variance for accuracy.
  for (const auto& c : chunks) {
    for (std::size_t t = 0; t < c.frames(); ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        const double d = c.values.at(t, f) - stats.mean[f];
        stats.std[f] += d * d;
      }
    }
  }
  for (double& s : stats.std) s = std::sqrt(s / count);
  return stats;
}

FeatureChunk normalize(const FeatureChunk& chunk, const NormStats& stats) {
  if (stats.mean.size() != chunk.bins() || stats.std.size() != chunk.bins()) {
    throw DimensionError("normalize: stats cover " + std::to_string(stats.mean.size()) +
                         " bins, chunk has " + std::to_string(chunk.bins()));
  }
  FeatureChunk out = chunk;
  for (std::size_t t = 0; t < chunk.frames(); ++t) {
    for (std::size_t f = 0; f < chunk.bins(); ++f) {
      out.values.at(t, f) = (chunk.values.at(t, f) - stats.mean[f]) / std::max(stats.std[f], kStdFloor);
    }
  }
  return out;
}

std::pair<std::vector<FeatureChunk>, NormStats> normalize(
    std::span<const FeatureChunk> chunks, const std::optional<NormStats>& stats) {
  NormStats used = stats ? *stats : compute_norm_stats(chunks);
  std::vector<FeatureChunk> out;
  out.reserve(chunks.size());
  for (const auto& c : chunks) out.push_back(normalize(c, used));
  return {std::move(out), std::move(used)};
}

std::vector<FeatureChunk> normalize_eval(std::span<const FeatureChunk> chunks,
                                         const NormStats* stats) {
  if (stats == nullptr) {
    throw ConfigError("normalize: evaluation mode requires stored normalization stats");
  }
  return normalize(chunks, std::optional<NormStats>(*stats)).first;
}

namespace {

void write_container(const std::filesystem::path& path, const Tensor& values, FeatureKind kind) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  detail::put_header(out, kFeatureMagic, kFeatureVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(values.dim(0)));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(values.dim(1)));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
  for (double v : values.values()) detail::put_f32(out, v);
  if (!out) throw DataError("failed writing " + path.string());
}

std::pair<Tensor, FeatureKind> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  const std::string what = "feature file " + path.string();
  const std::uint32_t version = detail::get_header(in, kFeatureMagic, what);
  if (version != kFeatureVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t T = get_le<std::uint32_t>(in, what);
  const std::uint32_t F = get_le<std::uint32_t>(in, what);
  const std::uint8_t kind = get_le<std::uint8_t>(in, what);
  if (kind > 1) throw FormatError(what + ": unknown feature kind tag " + std::to_string(kind));
  Tensor values({T, F});
  for (double& v : values.values()) v = detail::get_f32(in, what);
  return {std::move(values), static_cast<FeatureKind>(kind)};
}

}  // namespace

void write_features(const std::filesystem::path& path, const FeatureChunk& chunk) {
  write_container(path, chunk.values, chunk.kind);
}

FeatureChunk read_features(const std::filesystem::path& path, double frame_hop_seconds) {
  auto [values, kind] = read_container(path);
  if (!values.all_finite()) throw FormatError("feature file " + path.string() + " holds non-finite values");
  return FeatureChunk{std::move(values), kind, frame_hop_seconds};
}

void write_norm_stats(const std::filesystem::path& path, const NormStats& stats) {
  const std::size_t F = stats.mean.size();
  Tensor values({2, F});
  for (std::size_t f = 0; f < F; ++f) {
    values.at(0, f) = stats.mean[f];
    values.at(1, f) = stats.std[f];
  }
  write_container(path, values, stats.kind);
}

NormStats read_norm_stats(const std::filesystem::path& path) {
  auto [values, kind] = read_container(path);
  if (values.dim(0) != 2) {
    throw FormatError("stats file " + path.string() + " must have 2 rows, has " +
                      std::to_string(values.dim(0)));
  }
  NormStats stats;
  stats.kind = kind;
  for (std::size_t f = 0; f < values.dim(1); ++f) {
    stats.mean.push_back(values.at(0, f));
    stats.std.push_back(values.at(1, f));
  }
  return stats;
}

}  // namespace gcrnn
