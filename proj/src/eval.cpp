// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "gcrnn/errors.hpp"

namespace gcrnn {

TagPrediction tag_clip(std::string clip_id, std::span<const double> posterior, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("tag threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
  TagPrediction p{std::move(clip_id), {posterior.begin(), posterior.end()}, {}};
  p.tags.reserve(posterior.size());
  for (double v : posterior) p.tags.push_back(v >= threshold ? 1 : 0);
  return p;
}

std::vector<std::vector<std::uint8_t>> binarize(const Tensor& track, double threshold) {
  if (track.rank() != 2) throw DimensionError("binarize: expected [T×C], got " + shape_string(track.shape()));
  const std::size_t T = track.dim(0), C = track.dim(1);
  std::vector<std::vector<std::uint8_t>> bits(C, std::vector<std::uint8_t>(T, 0));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) bits[c][t] = track.at(t, c) >= threshold ? 1 : 0;
  return bits;
}

std::vector<std::uint8_t> median_filter(const std::vector<std::uint8_t>& bits, std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw ConfigError("median filter window must be odd, got " + std::to_string(window));
  }
  const std::size_t n = bits.size();
  if (n == 0 || window == 1) return bits;
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  std::vector<std::uint8_t> out(n);
  for (std::ptrdiff_t t = 0; t <= last; ++t) {
    std::size_t ones = 0;
    for (std::ptrdiff_t d = -half; d <= half; ++d) {
      ones += bits[static_cast<std::size_t>(std::clamp(t + d, std::ptrdiff_t{0}, last))];
    }
    out[static_cast<std::size_t>(t)] = 2 * ones > window ? 1 : 0;
  }
  return out;
}

std::vector<EventInterval> extract_events(const Tensor& track, double frame_hop_seconds,
                                          const PostprocessConfig& config,
                                          const std::string& clip_id) {
  if (config.median_window % 2 == 0) {
    throw ConfigError("median window must be odd, got " + std::to_string(config.median_window));
  }
  if (frame_hop_seconds <= 0.0) throw ConfigError("frame hop must be positive");
  constexpr double kTol = 1e-9;
  const auto bits = binarize(track, config.threshold);
  std::vector<EventInterval> events;
  for (std::size_t c = 0; c < bits.size(); ++c) {
    const auto smooth = median_filter(bits[c], config.median_window);
    std::vector<std::pair<std::size_t, std::size_t>> runs;  // [start, end)
    for (std::size_t t = 0; t < smooth.size();) {
      if (!smooth[t]) {
        ++t;
        continue;
      }
      std::size_t e = t;
      while (e < smooth.size() && smooth[e]) ++e;
      runs.emplace_back(t, e);
      t = e;
    }
    std::erase_if(runs, [&](const auto& r) {
      return static_cast<double>(r.second - r.first) * frame_hop_seconds < config.min_duration - kTol;
    });
    std::vector<std::pair<std::size_t, std::size_t>> merged;
    for (const auto& r : runs) {
      if (!merged.empty() &&
          static_cast<double>(r.first - merged.back().second) * frame_hop_seconds <
              config.merge_gap - kTol) {
        merged.back().second = r.second;
      } else {
        merged.push_back(r);
      }
    }
    for (const auto& [s, e] : merged) {
      events.push_back(EventInterval{clip_id, c, static_cast<double>(s) * frame_hop_seconds,
                                     static_cast<double>(e) * frame_hop_seconds});
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.class_id < b.class_id;
  });
  return events;
}

namespace {

double ratio_percent(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

TaggingScores score_tagging(const TagSet& predictions, const TagSet& references) {
  std::vector<std::string> only_pred, only_ref;
  for (const auto& [id, tags] : predictions)
    if (!references.count(id)) only_pred.push_back(id);
  for (const auto& [id, tags] : references)
    if (!predictions.count(id)) only_ref.push_back(id);
  if (!only_pred.empty() || !only_ref.empty()) {
    std::string msg = "score_tagging: clip sets differ;";
    for (const auto& id : only_pred) msg += " pred-only:" + id;
    for (const auto& id : only_ref) msg += " ref-only:" + id;
    throw ValidationError(msg);
  }
  TaggingScores s;
  for (const auto& [id, pred] : predictions) {
    const auto& ref = references.at(id);
    if (pred.size() != ref.size()) {
      throw DimensionError("score_tagging: clip " + id + " has " + std::to_string(pred.size()) +
                           " predicted and " + std::to_string(ref.size()) + " reference classes");
    }
    for (std::size_t c = 0; c < pred.size(); ++c) {
      if (pred[c] && ref[c]) ++s.tp;
      else if (pred[c]) ++s.fp;
      else if (ref[c]) ++s.fn;
    }
  }
  s.precision = ratio_percent(s.tp, s.tp + s.fp);
  s.recall = ratio_percent(s.tp, s.tp + s.fn);
  s.f1 = f1_of(s.precision, s.recall);
  return s;
}

SedScores score_sed(const std::vector<EventInterval>& predictions,
                    const std::vector<EventInterval>& references, double segment_seconds) {
  if (!(segment_seconds > 0.0)) throw ConfigError("segment length must be positive");
  constexpr double kTol = 1e-9;
  std::map<std::string, double> extent;
  std::size_t n_classes = 0;
  for (const auto* list : {&predictions, &references}) {
    for (const auto& e : *list) {
      if (!(e.onset >= 0.0 && e.offset > e.onset)) {
        throw ValidationError("score_sed: invalid interval [" + std::to_string(e.onset) + ", " +
                              std::to_string(e.offset) + "] in clip " + e.clip_id);
      }
      extent[e.clip_id] = std::max(extent[e.clip_id], e.offset);
      n_classes = std::max(n_classes, e.class_id + 1);
    }
  }
  using Grid = std::vector<std::vector<std::uint8_t>>;  // [segment][class]
  auto rasterize = [&](const std::vector<EventInterval>& events, std::map<std::string, Grid>& grids) {
    for (const auto& [clip, end] : extent) {
      const auto n_seg = static_cast<std::size_t>(std::ceil(end / segment_seconds - kTol));
      grids[clip] = Grid(n_seg, std::vector<std::uint8_t>(n_classes, 0));
    }
    for (const auto& e : events) {
      Grid& g = grids[e.clip_id];
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double lo = static_cast<double>(i) * segment_seconds;
        const double hi = lo + segment_seconds;
        if (e.onset < hi - kTol && e.offset > lo + kTol) g[i][e.class_id] = 1;
      }
    }
  };
  std::map<std::string, Grid> pred_grid, ref_grid;
  rasterize(predictions, pred_grid);
  rasterize(references, ref_grid);

  SedScores s;
  for (const auto& [clip, ref] : ref_grid) {
    const Grid& pred = pred_grid.at(clip);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      std::size_t tp = 0, fp = 0, fn = 0, nref = 0;
      for (std::size_t c = 0; c < n_classes; ++c) {
        nref += ref[i][c];
        if (ref[i][c] && pred[i][c]) ++tp;
        else if (pred[i][c]) ++fp;
        else if (ref[i][c]) ++fn;
      }
      s.tp += tp;
      s.fp += fp;
      s.fn += fn;
      s.reference_active += nref;
      s.substitutions += std::min(fn, fp);
      s.deletions += fn > fp ? fn - fp : 0;
      s.insertions += fp > fn ? fp - fn : 0;
    }
  }
  s.precision = ratio_percent(s.tp, s.tp + s.fp);
  s.recall = ratio_percent(s.tp, s.tp + s.fn);
  s.f1 = f1_of(s.precision, s.recall);
  s.error_rate = s.reference_active == 0
                     ? 0.0
                     : static_cast<double>(s.substitutions + s.deletions + s.insertions) /
                           static_cast<double>(s.reference_active);
  return s;
}

void write_events(const std::filesystem::path& path, const std::vector<EventInterval>& events,
                  const LabelMap& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write event file " + path.string());
  out << std::fixed << std::setprecision(3);
  for (const auto& e : events) {
    out << e.clip_id << '\t' << e.onset << '\t' << e.offset << '\t' << labels.name(e.class_id) << '\n';
  }
  if (!out) throw DataError("failed writing event file " + path.string());
}

std::vector<EventInterval> read_events(const std::filesystem::path& path, const LabelMap& labels) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event file " + path.string());
  std::vector<EventInterval> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 4) throw FormatError(where + ": expected 4 tab-separated fields");
    EventInterval e;
    e.clip_id = fields[0];
    try {
      e.onset = std::stod(fields[1]);
      e.offset = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw FormatError(where + ": bad onset/offset");
    }
    const auto id = labels.find(fields[3]);
    if (!id) throw ValidationError(where + ": unknown class '" + fields[3] + "'");
    e.class_id = *id;
    if (!(e.onset >= 0.0 && e.offset > e.onset)) {
      throw ValidationError(where + ": onset must be >= 0 and before offset");
    }
    events.push_back(std::move(e));
  }
  return events;
}

void write_tagging_report(std::ostream& os, const TaggingScores& s) {
  os << std::fixed << std::setprecision(4) << "task=tagging\n"
     << "f1=" << s.f1 << "\nprecision=" << s.precision << "\nrecall=" << s.recall << "\n"
     << "tp=" << s.tp << "\nfp=" << s.fp << "\nfn=" << s.fn << "\n";
}

void write_sed_report(std::ostream& os, const SedScores& s) {
  os << std::fixed << std::setprecision(4) << "task=sed\n"
     << "f1=" << s.f1 << "\ner=" << s.error_rate << "\nprecision=" << s.precision
     << "\nrecall=" << s.recall << "\n"
     << "S=" << s.substitutions << "\nD=" << s.deletions << "\nI=" << s.insertions
     << "\nN=" << s.reference_active << "\n"
     << "tp=" << s.tp << "\nfp=" << s.fp << "\nfn=" << s.fn << "\n";
}

void write_curves(const std::filesystem::path& path, const Tensor& classification,
                  const Tensor& localization, const Tensor& combined, const LabelMap& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write curves " + path.string());
  out << "frame,class_name,O,Z_loc,O_prime\n" << std::fixed << std::setprecision(6);
  for (std::size_t t = 0; t < classification.dim(0); ++t) {
    for (std::size_t c = 0; c < classification.dim(1); ++c) {
      out << t << ',' << labels.name(c) << ',' << classification.at(t, c) << ','
          << localization.at(t, c) << ',' << combined.at(t, c) << '\n';
    }
  }
}

}  // namespace gcrnn
