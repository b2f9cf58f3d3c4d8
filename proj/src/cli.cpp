// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gcrnn/audio.hpp"
#include "gcrnn/checkpoint.hpp"
#include "gcrnn/dataset.hpp"
#include "gcrnn/errors.hpp"
#include "gcrnn/eval.hpp"
#include "gcrnn/model.hpp"
#include "gcrnn/synth.hpp"
#include "gcrnn/trainer.hpp"

namespace fs = std::filesystem;

namespace gcrnn {

std::vector<std::string> config_file_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::vector<std::string> args;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    std::replace(key.begin(), key.end(), '_', '-');
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

namespace {

struct ExtractOptions {
  std::string wav_dir, out_dir, feature = "log_mel";
};

struct TrainOptions {
  std::string manifest, labels, out_dir = "run", mode = "tagging", pool = "attention";
  bool balance = true;
  std::size_t epochs = 10, batch_size = 16, checkpoint_every = 1, filters = 64, hidden = 128;
  std::uint64_t seed = 0;
  double lr = 0.001, val_fraction = 0.1;
};

struct TagOptions {
  std::vector<std::string> checkpoints;
  std::string manifest, labels, out = "posteriors.csv", pool = "attention", ref, scores;
  bool fuse = false;
  std::size_t fuse_k = kDefaultEpochFusion;
  double threshold = 0.5;
};

struct DetectOptions {
  std::string checkpoint, manifest, labels, out = "events.tsv", track = "Oprime", curves_dir,
      pool = "attention";
  PostprocessConfig post;
};

struct EvaluateOptions {
  std::string pred, ref, labels, task = "tagging", out;
  double threshold = 0.5, segment = 1.0;
};

struct FuseOptions {
  std::vector<std::string> inputs;
  std::string out = "fused.csv";
};

struct SynthOptions {
  std::string out_dir;
  SynthConfig config;
};

std::vector<fs::path> list_wavs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("wav directory " + dir.string() + " does not exist");
  std::vector<fs::path> wavs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") wavs.push_back(entry.path());
  }
  std::sort(wavs.begin(), wavs.end());
  return wavs;
}

int cmd_extract(const ExtractOptions& o, std::ostream& out, std::ostream& err) {
  const FeatureKind kind = parse_feature_kind(o.feature);
  const auto wavs = list_wavs(o.wav_dir);
  if (wavs.empty()) {
    err << "error: no input files in " << o.wav_dir << "\n";
    return kExitData;
  }
  fs::create_directories(o.out_dir);
  const FeatureConfig fc;
  std::vector<FeatureChunk> chunks;
  for (const auto& wav : wavs) {
    try {
      FeatureChunk chunk = log_mel(load_wav(wav, fc.sample_rate), fc);
      if (kind == FeatureKind::mfcc) chunk = mfcc(chunk, fc.n_mfcc);
      write_features(fs::path(o.out_dir) / (wav.stem().string() + ".feat"), chunk);
      chunks.push_back(std::move(chunk));
    } catch (const FormatError& e) {
      err << "warning: skipping " << wav.string() << ": " << e.what() << "\n";
    }
  }
  if (chunks.empty()) {
    err << "error: all " << wavs.size() << " input files failed\n";
    return kExitData;
  }
  write_norm_stats(fs::path(o.out_dir) / "stats.norm", compute_norm_stats(chunks));
  out << "extracted " << chunks.size() << " of " << wavs.size() << " files (" << feature_kind_name(kind)
      << ", " << chunks.front().frames() << "x" << chunks.front().bins() << ") into " << o.out_dir << "\n";
  return kExitOk;
}

int cmd_train(const TrainOptions& o, std::ostream& out) {
  const LabelMap labels = LabelMap::load(o.labels);
  const auto corpus = load_corpus(o.manifest, labels);
  const auto chunks = load_chunks(corpus);
  TrainConfig cfg;
  cfg.model.n_classes = labels.size();
  cfg.model.class_names = labels.names();
  cfg.model.n_frames = chunks.front().frames();
  cfg.model.n_bins = chunks.front().bins();
  cfg.model.feature = chunks.front().kind;
  cfg.model.filters = o.filters;
  cfg.model.hidden = o.hidden;
  cfg.model.mode = parse_task_mode(o.mode);
  cfg.batch_size = o.batch_size;
  cfg.epochs = o.epochs;
  cfg.lr = o.lr;
  cfg.seed = o.seed;
  cfg.pooling = parse_pooling(o.pool);
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.balance = o.balance;
  cfg.validation_fraction = o.val_fraction;
  cfg.out_dir = o.out_dir;
  const TrainResult result = train(corpus, chunks, cfg);
  const auto& last = result.log.epochs.back();
  out << "trained " << cfg.epochs << " epochs on " << result.split.train.size() << " clips ("
      << result.split.validation.size() << " validation); final loss=" << last.loss
      << " f1=" << last.f1 << "; " << result.checkpoints.size() << " checkpoints in " << o.out_dir
      << "\n";
  return kExitOk;
}

int cmd_tag(const TagOptions& o, std::ostream& out) {
  const LabelMap labels = LabelMap::load(o.labels);
  const auto corpus = load_corpus(o.manifest, labels, CorpusOptions{false, true});
  const auto chunks = load_chunks(corpus);
  const Pooling pooling = parse_pooling(o.pool);
  std::vector<fs::path> paths(o.checkpoints.begin(), o.checkpoints.end());
  PosteriorTable table;
  for (const auto& r : corpus) table.clip_ids.push_back(r.clip_id);
  if (o.fuse) {
    table.rows = fuse_epochs(paths, chunks, o.fuse_k, pooling);
  } else {
    table.rows = predict_posteriors(load_checkpoint(paths.back()), chunks, pooling);
  }
  if (table.classes() != labels.size()) {
    throw ValidationError("checkpoint has " + std::to_string(table.classes()) + " classes, label map " +
                          std::to_string(labels.size()));
  }
  write_posteriors(o.out, table);
  out << "wrote " << table.rows.size() << " posteriors to " << o.out << "\n";
  if (!o.ref.empty()) {
    const auto refs = load_corpus(o.ref, labels, CorpusOptions{false, false});
    const auto scores = score_tagging(tags_from_posteriors(table, o.threshold), tags_from_records(refs));
    const std::string path = o.scores.empty() ? o.out + ".scores" : o.scores;
    std::ofstream report(path);
    if (!report) throw DataError("cannot write " + path);
    write_tagging_report(report, scores);
    out << "f1=" << scores.f1 << " precision=" << scores.precision << " recall=" << scores.recall
        << " (report " << path << ")\n";
  }
  return kExitOk;
}

int cmd_detect(const DetectOptions& o, std::ostream& out) {
  if (o.track != "Oprime" && o.track != "O") throw ConfigError("--track must be O or Oprime");
  const LabelMap labels = LabelMap::load(o.labels);
  const auto corpus = load_corpus(o.manifest, labels, CorpusOptions{false, true});
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  if (ckpt.params.config.n_classes != labels.size()) {
    throw ValidationError("checkpoint has " + std::to_string(ckpt.params.config.n_classes) +
                          " classes, label map " + std::to_string(labels.size()));
  }
  const Pooling pooling = parse_pooling(o.pool);
  if (!o.curves_dir.empty()) fs::create_directories(o.curves_dir);
  std::vector<EventInterval> events;
  for (const auto& r : corpus) {
    const FeatureChunk raw = read_features(r.feature_path);
    const FeatureChunk chunk = ckpt.norm ? normalize(raw, *ckpt.norm) : raw;
    const FramePosteriors fp = forward(chunk, ckpt.params, pooling);
    const std::size_t t_out = fp.classification.dim(0);
    const double hop = raw.frame_hop_seconds * static_cast<double>(raw.frames()) / static_cast<double>(t_out);
    const Tensor& track = o.track == "O" ? fp.classification : fp.combined;
    auto clip_events = extract_events(track, hop, o.post, r.clip_id);
    events.insert(events.end(), clip_events.begin(), clip_events.end());
    if (!o.curves_dir.empty()) {
      write_curves(fs::path(o.curves_dir) / (r.clip_id + ".csv"), fp.classification, fp.localization,
                   fp.combined, labels);
    }
  }
  write_events(o.out, events, labels);
  out << "wrote " << events.size() << " events for " << corpus.size() << " clips to " << o.out << "\n";
  return kExitOk;
}

int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
  const LabelMap labels = LabelMap::load(o.labels);
  std::ostringstream report;
  if (o.task == "tagging") {
    const auto preds = tags_from_posteriors(read_posteriors(o.pred), o.threshold);
    const auto refs = tags_from_records(load_corpus(o.ref, labels, CorpusOptions{false, false}));
    write_tagging_report(report, score_tagging(preds, refs));
  } else if (o.task == "sed") {
    write_sed_report(report, score_sed(read_events(o.pred, labels), read_events(o.ref, labels), o.segment));
  } else {
    throw ConfigError("--task must be tagging or sed");
  }
  if (o.out.empty()) {
    out << report.str();
  } else {
    std::ofstream f(o.out);
    if (!f) throw DataError("cannot write " + o.out);
    f << report.str();
    out << "wrote score report to " << o.out << "\n";
  }
  return kExitOk;
}

int cmd_fuse(const FuseOptions& o, std::ostream& out) {
  std::vector<PosteriorTable> tables;
  for (const auto& p : o.inputs) tables.push_back(read_posteriors(p));
  const PosteriorTable fused = fuse_systems(tables);
  write_posteriors(o.out, fused);
  out << "fused " << tables.size() << " systems over " << fused.rows.size() << " clips into " << o.out << "\n";
  return kExitOk;
}

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  const auto clips = generate_corpus(o.config);
  write_corpus(o.out_dir, clips, LabelMap(synth_class_names(o.config.classes)));
  out << "wrote " << clips.size() << " clips over " << o.config.classes << " classes to " << o.out_dir << "\n";
  return kExitOk;
}

/// Inserts config-file arguments directly after the subcommand so flags given
/// on the command line (which come later) take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (config_path.empty() || out.empty()) return out;
  const auto extra = config_file_args(config_path);
  out.insert(out.begin() + 1, extra.begin(), extra.end());
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gated CRNN audio tagging and weakly supervised sound event detection"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.add_option("--config", "key=value file of flag defaults; command-line flags win");

  ExtractOptions ex;
  auto* extract = app.add_subcommand("extract", "WAV directory -> feature files (.feat) and stats.norm");
  extract->add_option("wav_dir", ex.wav_dir, "Directory of .wav files")->required();
  extract->add_option("out_dir", ex.out_dir, "Output directory")->required();
  extract->add_option("--feature", ex.feature, "log_mel (240x64, reference) or mfcc (240x24)")
      ->capture_default_str();

  TrainOptions tr;
  auto* trainc = app.add_subcommand("train", "Train the gated CRNN on weak labels");
  trainc->add_option("manifest", tr.manifest, "Manifest CSV clip_id,feature_path,labels")->required();
  trainc->add_option("labels", tr.labels, "Label map, one class per line")->required();
  trainc->add_option("--out", tr.out_dir, "Checkpoint/run-log directory")->capture_default_str();
  trainc->add_option("--mode", tr.mode, "tagging (2x2 pooling) or sed (1x2 pooling); reference: both")
      ->capture_default_str();
  trainc->add_flag("--balance,!--no-balance", tr.balance, "Class-balanced mini-batches (reference: on)");
  trainc->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str();
  trainc->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  trainc->add_option("--batch-size", tr.batch_size, "Mini-batch size N")->capture_default_str();
  trainc->add_option("--lr", tr.lr, "Adam learning rate (reference: 0.001, fixed)")->capture_default_str();
  trainc->add_option("--checkpoint-every", tr.checkpoint_every, "Save a checkpoint every k epochs")
      ->capture_default_str();
  trainc->add_option("--pool", tr.pool, "attention (reference) or mean clip pooling")->capture_default_str();
  trainc->add_option("--filters", tr.filters, "Filters per gated conv (reference: 64)")->capture_default_str();
  trainc->add_option("--hidden", tr.hidden, "Bi-GRU units per direction (reference: 128)")->capture_default_str();
  trainc->add_option("--val-fraction", tr.val_fraction, "Validation share, split by clip-id hash")
      ->capture_default_str();

  TagOptions tg;
  auto* tag = app.add_subcommand("tag", "Clip posteriors for a manifest");
  tag->add_option("checkpoints", tg.checkpoints, "Checkpoint file(s), oldest first")->required();
  tag->add_option("--manifest", tg.manifest, "Manifest of clips to tag")->required();
  tag->add_option("--labels", tg.labels, "Label map")->required();
  tag->add_option("--out", tg.out, "Posterior CSV")->capture_default_str();
  tag->add_option("--pool", tg.pool, "attention (reference) or mean")->capture_default_str();
  tag->add_flag("--fuse", tg.fuse, "Average posteriors over the last k checkpoints (epoch fusion)");
  tag->add_option("--fuse-k", tg.fuse_k, "Checkpoints entering epoch fusion")->capture_default_str();
  tag->add_option("--ref", tg.ref, "Reference manifest; writes a tagging score report");
  tag->add_option("--scores", tg.scores, "Score report path (default <out>.scores)");
  tag->add_option("--threshold", tg.threshold, "Tag threshold")->capture_default_str();

  DetectOptions dt;
  auto* detect = app.add_subcommand("detect", "Event intervals from the localization output");
  detect->add_option("checkpoint", dt.checkpoint, "sed-mode checkpoint")->required();
  detect->add_option("--manifest", dt.manifest, "Manifest of clips")->required();
  detect->add_option("--labels", dt.labels, "Label map")->required();
  detect->add_option("--out", dt.out, "Event list (TSV)")->capture_default_str();
  detect->add_option("--theta", dt.post.threshold, "Frame activity threshold")->capture_default_str();
  detect->add_option("--median", dt.post.median_window, "Median filter window in frames (odd)")
      ->capture_default_str();
  detect->add_option("--min-dur", dt.post.min_duration, "Minimum event duration (s)")->capture_default_str();
  detect->add_option("--merge-gap", dt.post.merge_gap, "Merge events closer than this (s)")
      ->capture_default_str();
  detect->add_option("--track", dt.track, "Oprime (O*Z_loc) or O")->capture_default_str();
  detect->add_option("--emit-curves", dt.curves_dir, "Write per-clip frame curves CSV here");
  detect->add_option("--pool", dt.pool, "attention (reference) or mean")->capture_default_str();

  EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against references");
  evaluate->add_option("pred", ev.pred, "Posterior CSV (tagging) or event TSV (sed)")->required();
  evaluate->add_option("ref", ev.ref, "Reference manifest (tagging) or event TSV (sed)")->required();
  evaluate->add_option("--labels", ev.labels, "Label map")->required();
  evaluate->add_option("--task", ev.task, "tagging or sed")->capture_default_str();
  evaluate->add_option("--threshold", ev.threshold, "Tag threshold")->capture_default_str();
  evaluate->add_option("--segment", ev.segment, "Segment length in seconds (sed)")->capture_default_str();
  evaluate->add_option("--out", ev.out, "Report path (default stdout)");

  FuseOptions fu;
  auto* fuse = app.add_subcommand("fuse", "Average posterior CSVs of several systems");
  fuse->add_option("inputs", fu.inputs, "Posterior CSV files")->required();
  fuse->add_option("--out", fu.out, "Fused posterior CSV")->capture_default_str();

  SynthOptions sy;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic tone corpus with event truth");
  synth->add_option("out_dir", sy.out_dir, "Output directory")->required();
  synth->add_option("--clips", sy.config.clips, "Number of clips")->capture_default_str();
  synth->add_option("--classes", sy.config.classes, "Number of classes (<= 17)")->capture_default_str();
  synth->add_option("--seed", sy.config.seed, "Random seed")->capture_default_str();
  synth->add_option("--noise", sy.config.noise_level, "Noise standard deviation")->capture_default_str();

  for (auto* sub : {extract, trainc, tag, detect, evaluate, fuse, synth}) {
    for (CLI::Option* opt : sub->get_options()) {
      if (opt->get_expected_max() <= 1) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // A subcommand's --help surfaces here with the parsed subcommand selected.
    if (e.get_exit_code() == 0) {
      for (auto* sub : app.get_subcommands()) out << sub->help();
      if (app.get_subcommands().empty()) out << app.help();
      return kExitOk;
    }
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  }

  try {
    if (*extract) return cmd_extract(ex, out, err);
    if (*trainc) return cmd_train(tr, out);
    if (*tag) return cmd_tag(tg, out);
    if (*detect) return cmd_detect(dt, out);
    if (*evaluate) return cmd_evaluate(ev, out);
    if (*fuse) return cmd_fuse(fu, out);
    if (*synth) return cmd_synth(sy, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace gcrnn
