// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "gcrnn/errors.hpp"

namespace gcrnn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

LabelMap::LabelMap(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw ValidationError("label map: at least one class is required");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw ValidationError("label map: empty class name at id " + std::to_string(i));
    if (!ids_.emplace(names_[i], i).second) {
      throw ValidationError("label map: duplicate class name '" + names_[i] + "'");
    }
  }
}

LabelMap LabelMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label map " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) names.push_back(line);
  }
  return LabelMap(std::move(names));
}

void LabelMap::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write label map " + path.string());
  for (const auto& n : names_) out << n << "\n";
}

std::optional<std::size_t> LabelMap::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t ClipRecord::positive_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

Tensor ClipRecord::target() const {
  Tensor t({labels.size()});
  for (std::size_t c = 0; c < labels.size(); ++c) t[c] = labels[c] ? 1.0 : 0.0;
  return t;
}

std::vector<ClipRecord> load_corpus(const std::filesystem::path& manifest, const LabelMap& labels,
                                    CorpusOptions options) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  std::vector<ClipRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("clip_id,", 0) == 0) continue;
    const std::string where = manifest.string() + ":" + std::to_string(line_no);
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c1 == std::string::npos) throw ValidationError(where + ": expected clip_id,feature_path,labels");
    ClipRecord rec;
    rec.clip_id = trim(line.substr(0, c1));
    std::string path = trim(line.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1));
    const std::string label_field = c2 == std::string::npos ? "" : line.substr(c2 + 1);
    if (rec.clip_id.empty()) throw ValidationError(where + ": empty clip_id");
    rec.feature_path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base / path;
    rec.labels.assign(labels.size(), 0);
    std::istringstream ls(label_field);
    std::string name;
    while (std::getline(ls, name, ';')) {
      name = trim(name);
      if (name.empty()) continue;
      const auto id = labels.find(name);
      if (!id) throw ValidationError(where + ": unknown label '" + name + "'");
      rec.labels[*id] = 1;
    }
    if (options.require_labels && rec.positive_count() == 0) {
      throw ValidationError(where + ": clip '" + rec.clip_id + "' has no labels");
    }
    if (options.require_features && !std::filesystem::exists(rec.feature_path)) {
      throw DataError(where + ": feature file " + rec.feature_path.string() + " does not exist");
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw DataError("manifest " + manifest.string() + " is empty");
  return records;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<ClipRecord>& records,
                    const LabelMap& labels) {
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write manifest " + manifest.string());
  for (const auto& r : records) {
    out << r.clip_id << "," << r.feature_path.generic_string() << ",";
    bool first = true;
    for (std::size_t c = 0; c < r.labels.size(); ++c) {
      if (!r.labels[c]) continue;
      out << (first ? "" : ";") << labels.name(c);
      first = false;
    }
    out << "\n";
  }
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Split split_by_hash(const std::vector<ClipRecord>& records, double validation_fraction) {
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  const auto cut = static_cast<std::uint64_t>(validation_fraction * 10000.0);
  Split s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (fnv1a(records[i].clip_id) % 10000 < cut) {
      s.validation.push_back(i);
    } else {
      s.train.push_back(i);
    }
  }
  return s;
}

BalancedSampler::BalancedSampler(const std::vector<ClipRecord>& records,
                                 std::vector<std::size_t> subset, std::size_t n_classes,
                                 std::size_t batch_size, std::uint64_t seed)
    : pools_(n_classes), batch_size_(batch_size), rng_(seed) {
  if (batch_size == 0) throw ConfigError("sampler: batch size must be positive");
  for (std::size_t idx : subset) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (records.at(idx).has_label(c)) pools_[c].push_back(idx);
    }
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (!pools_[c].empty()) active_.push_back(c);
  }
  if (active_.empty()) throw DataError("sampler: corpus has no labelled clips");
}

BalancedSampler::BalancedSampler(const std::vector<ClipRecord>& records, std::size_t n_classes,
                                 std::size_t batch_size, std::uint64_t seed)
    : BalancedSampler(records,
                      [&] {
                        std::vector<std::size_t> all(records.size());
                        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
                        return all;
                      }(),
                      n_classes, batch_size, seed) {}

std::vector<std::size_t> BalancedSampler::next_batch() {
  std::vector<std::size_t> batch(batch_size_);
  last_classes_.resize(batch_size_);
  std::uniform_int_distribution<std::size_t> pick_class(0, active_.size() - 1);
  for (std::size_t s = 0; s < batch_size_; ++s) {
    const std::size_t c = active_[pick_class(rng_)];
    const auto& pool = pools_[c];
    std::uniform_int_distribution<std::size_t> pick_clip(0, pool.size() - 1);
    batch[s] = pool[pick_clip(rng_)];
    last_classes_[s] = c;
  }
  return batch;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

UnbalancedIterator::UnbalancedIterator(std::vector<std::size_t> subset, std::size_t batch_size,
                                       std::uint64_t seed)
    : subset_(std::move(subset)), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw ConfigError("iterator: batch size must be positive");
  if (subset_.empty()) throw DataError("iterator: empty corpus");
  order_ = epoch_order(subset_.size(), seed_, epoch_);
}

std::vector<std::size_t> UnbalancedIterator::next_batch() {
  if (pos_ >= order_.size()) {
    ++epoch_;
    order_ = epoch_order(subset_.size(), seed_, epoch_);
    pos_ = 0;
  }
  const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
  std::vector<std::size_t> batch;
  for (; pos_ < end; ++pos_) batch.push_back(subset_[order_[pos_]]);
  return batch;
}

std::vector<std::size_t> class_counts(const std::vector<ClipRecord>& records,
                                      const std::vector<std::size_t>& indices,
                                      std::size_t n_classes) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t idx : indices) {
    for (std::size_t c = 0; c < n_classes; ++c) counts[c] += records.at(idx).labels.at(c);
  }
  return counts;
}

double count_ratio(const std::vector<std::size_t>& counts,
                   const std::vector<std::size_t>& corpus_counts) {
  std::size_t hi = 0, lo = std::numeric_limits<std::size_t>::max();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (corpus_counts.at(c) == 0) continue;
    hi = std::max(hi, counts[c]);
    lo = std::min(lo, counts[c]);
  }
  if (lo == std::numeric_limits<std::size_t>::max()) return 1.0;
  if (lo == 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(hi) / static_cast<double>(lo);
}

}  // namespace gcrnn
