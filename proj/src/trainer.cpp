// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "gcrnn/errors.hpp"
#include "gcrnn/eval.hpp"
#include "gcrnn/ops.hpp"

namespace gcrnn {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (lr < 0.0 || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  model.validate();
}

std::string RunLog::to_string() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  for (const auto& e : epochs) {
    os << "epoch=" << e.epoch << " loss=" << e.loss << " f1=" << e.f1 << " precision=" << e.precision
       << " recall=" << e.recall << " split=" << e.split;
    if (!e.checkpoint.empty()) os << " checkpoint=" << e.checkpoint.filename().string();
    os << "\n";
  }
  return os.str();
}

void RunLog::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write run log " + path.string());
  out << to_string();
  if (!out) throw DataError("failed writing run log " + path.string());
}

namespace {

/// Sum of a small list of values in sorted order, so the result does not
/// depend on the order the values were supplied in.
double order_free_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  if (values.front() == values.back()) return values.front();
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace

BatchGradient batch_gradient(const ModelParams& params, std::span<const Tensor* const> features,
                             std::span<const Tensor> targets, Pooling pooling) {
  if (features.size() != targets.size() || features.empty()) {
    throw DimensionError("batch_gradient: " + std::to_string(features.size()) + " inputs, " +
                         std::to_string(targets.size()) + " targets");
  }
  const double inv_n = 1.0 / static_cast<double>(features.size());
  BatchGradient out;
  for (const auto& [name, t] : params.named()) out.grads.push_back(Tensor::zeros(t->shape()));
  for (std::size_t i = 0; i < features.size(); ++i) {
    Graph g;
    ForwardVars fv = forward_graph(g, *features[i], params, pooling, true);
    Var loss = scale(bce_loss(fv.clip_output, targets[i]), inv_n);
    g.backward(loss);
    out.loss += loss.value()[0];
    for (std::size_t p = 0; p < fv.params.size(); ++p) out.grads[p].add_inplace(fv.params[p].grad());
  }
  return out;
}

std::vector<FeatureChunk> load_chunks(const std::vector<ClipRecord>& corpus) {
  std::vector<FeatureChunk> chunks;
  chunks.reserve(corpus.size());
  for (const auto& r : corpus) chunks.push_back(read_features(r.feature_path));
  return chunks;
}

namespace {

TaggingScores evaluate_split(const ModelParams& params, const std::vector<ClipRecord>& corpus,
                             const std::vector<FeatureChunk>& normalized,
                             const std::vector<std::size_t>& indices, Pooling pooling,
                             double threshold) {
  TagSet preds, refs;
  for (std::size_t idx : indices) {
    const auto post = forward(normalized[idx].values, params, pooling).clip_output;
    preds[corpus[idx].clip_id] = tag_clip(corpus[idx].clip_id, post.values(), threshold).tags;
    refs[corpus[idx].clip_id] = corpus[idx].labels;
  }
  return score_tagging(preds, refs);
}

}  // namespace

TrainResult train(const std::vector<ClipRecord>& corpus, const std::vector<FeatureChunk>& chunks,
                  const TrainConfig& config) {
  config.validate();
  const ModelConfig& mc = config.model;
  if (corpus.empty()) throw DataError("train: empty corpus");
  if (chunks.size() != corpus.size()) {
    throw DimensionError("train: " + std::to_string(corpus.size()) + " records but " +
                         std::to_string(chunks.size()) + " feature chunks");
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].labels.size() != mc.n_classes) {
      throw DimensionError("train: clip " + corpus[i].clip_id + " has " +
                           std::to_string(corpus[i].labels.size()) + " labels, model has " +
                           std::to_string(mc.n_classes) + " classes");
    }
    if (chunks[i].kind != mc.feature || chunks[i].frames() != mc.n_frames || chunks[i].bins() != mc.n_bins) {
      throw DimensionError("train: clip " + corpus[i].clip_id + " features " +
                           shape_string(chunks[i].values.shape()) + " (" +
                           feature_kind_name(chunks[i].kind) + ") do not match the model input");
    }
  }

  TrainResult result;
  result.split = split_by_hash(corpus, config.validation_fraction);
  if (result.split.train.empty()) throw DataError("train: validation split left no training clips");
  const auto& train_idx = result.split.train;

  std::vector<FeatureChunk> train_chunks;
  for (std::size_t idx : train_idx) train_chunks.push_back(chunks[idx]);
  result.norm = compute_norm_stats(train_chunks);
  result.norm.kind = mc.feature;
  round_to_storage(result.norm);
  std::vector<FeatureChunk> normalized;
  normalized.reserve(chunks.size());
  for (const auto& c : chunks) normalized.push_back(normalize(c, result.norm));

  result.params = init_params(mc, config.seed);
  auto param_ptrs = result.params.tensors();
  std::vector<std::string> names;
  for (const auto& [name, t] : result.params.named()) names.push_back(name);
  result.adam = make_adam_state(param_ptrs, AdamConfig{config.lr});

  const std::size_t n_batches = (train_idx.size() + config.batch_size - 1) / config.batch_size;
  std::optional<BalancedSampler> sampler;
  if (config.balance) {
    sampler.emplace(corpus, train_idx, mc.n_classes, config.batch_size, config.seed);
  }
  const auto& eval_idx = result.split.validation.empty() ? train_idx : result.split.validation;
  const std::string eval_name = result.split.validation.empty() ? "train" : "validation";

  if (!config.out_dir.empty()) std::filesystem::create_directories(config.out_dir);

  std::vector<Tensor> targets;
  for (const auto& r : corpus) targets.push_back(r.target());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> batches;
    if (sampler) {
      for (std::size_t b = 0; b < n_batches; ++b) batches.push_back(sampler->next_batch());
    } else {
      const auto order = epoch_order(train_idx.size(), config.seed, epoch - 1);
      for (std::size_t b = 0; b < n_batches; ++b) {
        std::vector<std::size_t> batch;
        for (std::size_t i = b * config.batch_size;
             i < std::min(order.size(), (b + 1) * config.batch_size); ++i) {
          batch.push_back(train_idx[order[i]]);
        }
        batches.push_back(std::move(batch));
      }
    }

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const Tensor*> feats;
      std::vector<Tensor> batch_targets;
      for (std::size_t idx : batches[b]) {
        feats.push_back(&normalized[idx].values);
        batch_targets.push_back(targets[idx]);
      }
      BatchGradient bg;
      try {
        bg = batch_gradient(result.params, feats, batch_targets, config.pooling);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                            ": " + e.what());
      }
      if (!std::isfinite(bg.loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(b));
      }
      try {
        adam_step(param_ptrs, bg.grads, result.adam, names);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                            ": " + e.what());
      }
      epoch_loss += bg.loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss / static_cast<double>(batches.size());
    const auto scores =
        evaluate_split(result.params, corpus, normalized, eval_idx, config.pooling, config.threshold);
    rec.f1 = scores.f1;
    rec.precision = scores.precision;
    rec.recall = scores.recall;
    rec.split = eval_name;
    if (!config.out_dir.empty() &&
        (epoch % config.checkpoint_every == 0 || epoch == config.epochs)) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04zu.ckpt", epoch);
      rec.checkpoint = config.out_dir / name;
      save_checkpoint(rec.checkpoint, Checkpoint{result.params, result.adam, result.norm});
      result.checkpoints.push_back(rec.checkpoint);
    }
    spdlog::debug("epoch {} loss {:.6f} {} f1 {:.2f}", epoch, rec.loss, eval_name, rec.f1);
    result.log.epochs.push_back(std::move(rec));
    if (!config.out_dir.empty()) result.log.write(config.out_dir / "runlog.txt");
  }
  return result;
}

TrainResult train(const std::vector<ClipRecord>& corpus, const TrainConfig& config) {
  return train(corpus, load_chunks(corpus), config);
}

std::vector<std::vector<double>> predict_posteriors(const Checkpoint& checkpoint,
                                                    std::span<const FeatureChunk> chunks,
                                                    Pooling pooling) {
  std::vector<std::vector<double>> out;
  out.reserve(chunks.size());
  for (const auto& c : chunks) {
    const FeatureChunk input = checkpoint.norm ? normalize(c, *checkpoint.norm) : c;
    const Tensor post = forward(input, checkpoint.params, pooling).clip_output;
    out.emplace_back(post.values().begin(), post.values().end());
  }
  return out;
}

std::vector<std::vector<double>> fuse_epochs(std::span<const Checkpoint> checkpoints,
                                             std::span<const FeatureChunk> chunks,
                                             std::size_t last_k, Pooling pooling) {
  if (checkpoints.empty()) throw FusionError("fuse_epochs: no checkpoints");
  if (last_k == 0) throw ConfigError("fuse_epochs: k must be >= 1");
  const std::uint64_t arch = checkpoints.front().params.config.hash();
  for (const auto& c : checkpoints) {
    if (c.params.config.hash() != arch) {
      throw FusionError("fuse_epochs: checkpoints have different architectures");
    }
  }
  const std::size_t first = checkpoints.size() > last_k ? checkpoints.size() - last_k : 0;
  std::vector<std::vector<std::vector<double>>> per_ckpt;
  for (std::size_t i = first; i < checkpoints.size(); ++i) {
    per_ckpt.push_back(predict_posteriors(checkpoints[i], chunks, pooling));
  }
  std::vector<std::vector<double>> fused(chunks.size());
  for (std::size_t clip = 0; clip < chunks.size(); ++clip) {
    const std::size_t C = per_ckpt.front()[clip].size();
    fused[clip].resize(C);
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> vals;
      for (const auto& p : per_ckpt) vals.push_back(p[clip][c]);
      fused[clip][c] = order_free_mean(std::move(vals));
    }
  }
  return fused;
}

std::vector<std::vector<double>> fuse_epochs(const std::vector<std::filesystem::path>& checkpoints,
                                             std::span<const FeatureChunk> chunks,
                                             std::size_t last_k, Pooling pooling) {
  const std::size_t first = checkpoints.size() > last_k ? checkpoints.size() - last_k : 0;
  std::vector<Checkpoint> loaded;
  for (std::size_t i = first; i < checkpoints.size(); ++i) loaded.push_back(load_checkpoint(checkpoints[i]));
  return fuse_epochs(std::span<const Checkpoint>(loaded), chunks, last_k, pooling);
}

void write_posteriors(const std::filesystem::path& path, const PosteriorTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write posterior file " + path.string());
  out << "clip_id";
  for (std::size_t c = 0; c < table.classes(); ++c) out << ",p_" << c;
  out << "\n" << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    out << table.clip_ids[i];
    for (double v : table.rows[i]) out << "," << v;
    out << "\n";
  }
  if (!out) throw DataError("failed writing posterior file " + path.string());
}

PosteriorTable read_posteriors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open posterior file " + path.string());
  PosteriorTable table;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("clip_id", 0) == 0) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, field, ',');
    if (!seen.insert(field).second) throw FormatError(where + ": duplicate clip '" + field + "'");
    table.clip_ids.push_back(field);
    std::vector<double> row;
    while (std::getline(ls, field, ',')) {
      try {
        row.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw FormatError(where + ": bad posterior value '" + field + "'");
      }
    }
    if (!table.rows.empty() && row.size() != table.rows.front().size()) {
      throw FormatError(where + ": expected " + std::to_string(table.rows.front().size()) + " values");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

PosteriorTable fuse_systems(std::span<const PosteriorTable> tables) {
  if (tables.empty()) throw FusionError("fuse_systems: no posterior tables");
  const PosteriorTable& first = tables.front();
  std::set<std::string> ref_ids(first.clip_ids.begin(), first.clip_ids.end());
  std::vector<std::map<std::string, const std::vector<double>*>> lookup(tables.size());
  for (std::size_t s = 0; s < tables.size(); ++s) {
    const auto& t = tables[s];
    if (t.classes() != first.classes()) {
      throw FusionError("fuse_systems: system " + std::to_string(s) + " has " +
                        std::to_string(t.classes()) + " classes, expected " +
                        std::to_string(first.classes()));
    }
    for (std::size_t i = 0; i < t.clip_ids.size(); ++i) lookup[s][t.clip_ids[i]] = &t.rows[i];
    std::set<std::string> ids(t.clip_ids.begin(), t.clip_ids.end());
    if (ids != ref_ids) {
      std::string msg = "fuse_systems: clip sets differ between system 0 and system " +
                        std::to_string(s) + "; symmetric difference:";
      std::vector<std::string> diff;
      std::set_symmetric_difference(ref_ids.begin(), ref_ids.end(), ids.begin(), ids.end(),
                                    std::back_inserter(diff));
      for (const auto& id : diff) msg += " " + id;
      throw FusionError(msg);
    }
  }
  PosteriorTable out;
  out.clip_ids = first.clip_ids;
  for (const auto& id : first.clip_ids) {
    std::vector<double> row(first.classes());
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::vector<double> vals;
      for (const auto& l : lookup) vals.push_back((*l.at(id))[c]);
      row[c] = order_free_mean(std::move(vals));
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

TagSet tags_from_posteriors(const PosteriorTable& table, double threshold) {
  TagSet tags;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    tags[table.clip_ids[i]] = tag_clip(table.clip_ids[i], table.rows[i], threshold).tags;
  }
  return tags;
}

TagSet tags_from_records(const std::vector<ClipRecord>& records) {
  TagSet tags;
  for (const auto& r : records) tags[r.clip_id] = r.labels;
  return tags;
}

}  // namespace gcrnn
