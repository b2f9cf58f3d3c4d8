// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one [PASS]/[FAIL] line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gcrnn/cli.hpp"
#include "gcrnn/dataset.hpp"
#include "gcrnn/eval.hpp"
#include "gcrnn/synth.hpp"
#include "gcrnn/trainer.hpp"
#include "test_util.hpp"

using namespace gcrnn;
using namespace gcrnn::test;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool ok = true;
  std::ostringstream detail;
  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " FAILED(" << what << ")";
    }
  }
};

int failures = 0;

void report(int id, const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.ok = false;
    o.detail << " exception: " << e.what();
  }
  std::printf("[%s] %d %s:%s (%.1f s)\n", o.ok ? "PASS" : "FAIL", id, name.c_str(), o.detail.str().c_str(),
              seconds_since(t0));
  std::fflush(stdout);
  if (!o.ok) ++failures;
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << "gcrnn " << args.front() << " exited " << code << ": " << err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// --- 1 -----------------------------------------------------------------------

void gradient_suite(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::string worst_name;
  auto check = [&](const std::string& name, const ScalarFn& fn, std::vector<Tensor> in) {
    const double err = gradient_check(fn, std::move(in));
    if (err > worst) worst = err, worst_name = name;
  };
  check("matmul", [](Graph& g, const auto& v) { return weighted_sum(g, matmul(v[0], v[1])); },
        {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
  check("linear", [](Graph& g, const auto& v) { return weighted_sum(g, linear(v[0], v[1], v[2])); },
        {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)});
  check("conv2d", [](Graph& g, const auto& v) { return weighted_sum(g, conv2d(v[0], v[1], v[2])); },
        {random_tensor({5, 4, 2}, rng), random_tensor({3, 3, 2, 3}, rng), random_tensor({3}, rng)});
  check("sigmoid", [](Graph& g, const auto& v) { return weighted_sum(g, sigmoid(v[0])); },
        {random_tensor({4, 3}, rng, -3, 3)});
  check("tanh", [](Graph& g, const auto& v) { return weighted_sum(g, tanh(v[0])); },
        {random_tensor({4, 3}, rng, -3, 3)});
  check("softmax", [](Graph& g, const auto& v) { return weighted_sum(g, softmax_over_classes(v[0])); },
        {random_tensor({4, 5}, rng, -3, 3)});
  check("add", [](Graph& g, const auto& v) { return weighted_sum(g, add(v[0], v[1])); },
        {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});
  check("mul", [](Graph& g, const auto& v) { return weighted_sum(g, elementwise_mul(v[0], v[1])); },
        {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});
  check("divide", [](Graph& g, const auto& v) { return weighted_sum(g, divide(v[0], v[1])); },
        {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng, 0.5, 2.0)});
  check("scale", [](Graph& g, const auto& v) { return weighted_sum(g, scale(v[0], -2.5)); },
        {random_tensor({3, 3}, rng)});
  check("max_pool2d", [](Graph& g, const auto& v) { return weighted_sum(g, max_pool2d(v[0], 2, 2)); },
        {random_tensor({4, 6, 2}, rng)});
  check("sum_over_time", [](Graph& g, const auto& v) { return weighted_sum(g, sum_over_time(v[0])); },
        {random_tensor({5, 3}, rng)});
  check("mean_over_time", [](Graph& g, const auto& v) { return weighted_sum(g, mean_over_time(v[0])); },
        {random_tensor({5, 3}, rng)});
  check("concat", [](Graph& g, const auto& v) { return weighted_sum(g, concat_columns(v[0], v[1])); },
        {random_tensor({4, 2}, rng), random_tensor({4, 3}, rng)});
  check("reshape", [](Graph& g, const auto& v) { return weighted_sum(g, reshape(v[0], {6, 2})); },
        {random_tensor({3, 2, 2}, rng)});
  check("reverse_rows", [](Graph& g, const auto& v) { return weighted_sum(g, reverse_rows(v[0])); },
        {random_tensor({4, 3}, rng)});
  const Tensor target({4, 3}, std::vector<double>{1, 0, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1});
  check("bce", [&](Graph&, const auto& v) { return bce_loss(v[0], target); },
        {random_tensor({4, 3}, rng, 0.05, 0.95)});
  check("gru_sequence",
        [](Graph& g, const auto& v) { return weighted_sum(g, gru_sequence(v[0], v[1], v[2], v[3])); },
        {random_tensor({4, 3}, rng), random_tensor({3, 6}, rng), random_tensor({2, 6}, rng),
         random_tensor({6}, rng)});
  o.detail << " ops worst " << worst << " (" << worst_name << ")";
  o.require(worst < 1e-4, "op gradients");

  double model_worst = 0.0;
  for (TaskMode mode : {TaskMode::tagging, TaskMode::sed})
    for (Pooling pooling : {Pooling::attention, Pooling::mean}) {
      const ModelParams p = randomized_params(toy_config(mode), 5);
      const Tensor x = random_tensor({16, 8}, rng);
      const Tensor tgt({2}, std::vector<double>{1.0, 0.0});
      for (const auto& [name, err] : model_gradient_check(p, x, tgt, pooling)) model_worst = std::max(model_worst, err);
    }
  const double elapsed = seconds_since(t0);
  o.detail << "; model worst " << model_worst << "; " << elapsed << " s";
  o.require(model_worst < 1e-4, "model gradients");
  o.require(elapsed < 60.0, "runtime");
}

// --- 2 -----------------------------------------------------------------------

Tensor dense_oracle(const Tensor& h, const DenseHead& head) {
  const std::size_t T = h.dim(0), D = h.dim(1), C = head.bias.size();
  Tensor y({T, C});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      double s = head.bias[c];
      for (std::size_t d = 0; d < D; ++d) s += h.at(t, d) * head.weights.at(d, c);
      y.at(t, c) = s;
    }
  return y;
}

Tensor reverse_time(const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t T = x.dim(0), D = x.dim(1);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) y.at(t, d) = x.at(T - 1 - t, d);
  return y;
}

/// Whole-model scalar-loop recomputation: O, Z_loc, O' and O''.
FramePosteriors model_oracle(const Tensor& features, const ModelParams& p) {
  Tensor x = features.reshaped({features.dim(0), features.dim(1), 1});
  for (const auto& blk : p.blocks) x = glu_oracle(x, blk);
  const std::size_t T = x.dim(0);
  const Tensor seq = x.reshaped({T, x.dim(1) * x.dim(2)});
  const Tensor hf = gru_oracle(seq, p.rnn.forward);
  const Tensor hb = reverse_time(gru_oracle(reverse_time(seq), p.rnn.backward));
  const std::size_t H = hf.dim(1);
  Tensor h({T, 2 * H});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < H; ++j) {
      h.at(t, j) = hf.at(t, j);
      h.at(t, H + j) = hb.at(t, j);
    }
  const Tensor a = dense_oracle(h, p.cls_head), b = dense_oracle(h, p.loc_head);
  const std::size_t C = a.dim(1);
  FramePosteriors out{Tensor({T, C}), Tensor({T, C}), Tensor({T, C}), Tensor({C})};
  for (std::size_t t = 0; t < T; ++t) {
    double m = -INFINITY, z = 0.0;
    for (std::size_t c = 0; c < C; ++c) m = std::max(m, b.at(t, c));
    for (std::size_t c = 0; c < C; ++c) z += std::exp(b.at(t, c) - m);
    for (std::size_t c = 0; c < C; ++c) {
      out.classification.at(t, c) = sigmoid_scalar(a.at(t, c));
      out.localization.at(t, c) = std::exp(b.at(t, c) - m) / z;
      out.combined.at(t, c) = out.classification.at(t, c) * out.localization.at(t, c);
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      num += out.classification.at(t, c) * out.localization.at(t, c);
      den += out.localization.at(t, c);
    }
    out.clip_output[c] = num / den;
  }
  return out;
}

void oracle_suite(Outcome& o) {
  double glu = 0.0, product = 0.0, pooled = 0.0, frames = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t cin = 1 + seed % 2, cout = 2 + seed % 3;
    const std::size_t pt = seed % 2 ? 1 : 2;
    const GatedConvBlock blk{random_tensor({3, 3, cin, cout}, rng), random_tensor({cout}, rng),
                             random_tensor({3, 3, cin, cout}, rng), random_tensor({cout}, rng), pt, 2};
    const Tensor x = random_tensor({8, 6, cin}, rng);
    glu = std::max(glu, max_abs_diff(glu_block_forward(x, blk), glu_oracle(x, blk)));

    const ModelConfig cfg = toy_config(seed % 2 ? TaskMode::sed : TaskMode::tagging);
    const ModelParams p = randomized_params(cfg, seed);
    const Tensor feat = random_tensor({cfg.n_frames, cfg.n_bins}, rng);
    const FramePosteriors got = forward(feat, p);
    const FramePosteriors want = model_oracle(feat, p);
    frames = std::max({frames, max_abs_diff(got.classification, want.classification),
                       max_abs_diff(got.localization, want.localization)});
    product = std::max(product, max_abs_diff(got.combined, want.combined));
    pooled = std::max(pooled, max_abs_diff(got.clip_output, want.clip_output));
  }
  o.detail << " glu " << glu << ", O,Z " << frames << ", O' " << product << ", O'' " << pooled;
  o.require(glu < 1e-9, "glu");
  o.require(frames < 1e-9, "frame outputs");
  o.require(product < 1e-9, "product");
  o.require(pooled < 1e-9, "pooling");
}

// --- 3 -----------------------------------------------------------------------

void convexity(Outcome& o) {
  std::size_t violations = 0, checked = 0;
  std::mt19937_64 rng(303);
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const ModelConfig cfg = toy_config(i % 2 ? TaskMode::sed : TaskMode::tagging);
    const ModelParams p = randomized_params(cfg, i, 3.0);
    const Tensor x = random_tensor({cfg.n_frames, cfg.n_bins}, rng, -5.0, 5.0);
    for (double v : forward(x, p, Pooling::attention).clip_output.values()) {
      ++checked;
      if (!(v >= 0.0 && v <= 1.0)) ++violations;
    }
  }
  o.detail << " " << violations << " violations in " << checked << " entries";
  o.require(violations == 0, "bound");
}

// --- 4 -----------------------------------------------------------------------

void shapes(Outcome& o) {
  std::mt19937_64 rng(404);
  const Tensor x = random_tensor({240, 64}, rng);
  for (TaskMode mode : {TaskMode::tagging, TaskMode::sed}) {
    ModelConfig cfg;
    cfg.mode = mode;
    const ModelParams p = init_params(cfg, 1);
    Tensor h = x.reshaped({240, 64, 1});
    for (const auto& blk : p.blocks) h = glu_block_forward(h, blk);
    const FramePosteriors fp = forward(x, p);
    const std::size_t want_t = mode == TaskMode::tagging ? 30 : 240;
    o.detail << " " << task_mode_name(mode) << " " << shape_string(h.shape()) << " -> "
             << shape_string(fp.classification.shape());
    o.require(h.shape() == Shape{want_t, 8, 64}, "conv stack shape");
    o.require(cfg.output_frames() == want_t && cfg.output_bins() == 8, "config shape");
    o.require(fp.classification.shape() == Shape{want_t, 17}, "frame output shape");
    o.require(fp.clip_output.shape() == Shape{17}, "clip output shape");
  }
}

// --- 5 -----------------------------------------------------------------------

void balancing(Outcome& o) {
  std::vector<ClipRecord> recs;
  for (std::size_t i = 0; i < 950; ++i) {
    ClipRecord r;
    r.clip_id = "c" + std::to_string(i);
    r.labels = {static_cast<std::uint8_t>(i < 940), static_cast<std::uint8_t>(i >= 940)};
    recs.push_back(r);
  }
  std::vector<std::size_t> all(recs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto corpus_counts = class_counts(recs, all, 2);

  BalancedSampler sampler(recs, 2, 32, 5);
  UnbalancedIterator plain(all, 32, 5);
  std::vector<std::size_t> balanced, unbalanced;
  for (int b = 0; b < 200; ++b) {
    for (std::size_t i : sampler.next_batch()) balanced.push_back(i);
    for (std::size_t i : plain.next_batch()) unbalanced.push_back(i);
  }
  const double rb = count_ratio(class_counts(recs, balanced, 2), corpus_counts);
  const double ru = count_ratio(class_counts(recs, unbalanced, 2), corpus_counts);
  o.detail << " corpus 940:10, balanced ratio " << rb << ", unbalanced ratio " << ru;
  o.require(rb >= 0.2 && rb <= 5.0, "balanced ratio");
  o.require(ru > 20.0, "unbalanced ratio");
}

// --- 6, 7, 8, 10: synthetic corpus through the command line --------------------

struct Corpus {
  fs::path root;
  std::string manifest() const { return (root / "manifest.csv").string(); }
  std::string labels() const { return (root / "labels.txt").string(); }
};

std::vector<std::string> small_net(std::vector<std::string> extra) {
  std::vector<std::string> a{"--filters", "16", "--hidden", "32", "--val-fraction", "0", "--seed", "0"};
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

int train(const Corpus& c, const std::string& manifest, const fs::path& out, std::vector<std::string> extra) {
  std::vector<std::string> a{"train", manifest, c.labels(), "--out", out.string()};
  for (auto& s : small_net(std::move(extra))) a.push_back(s);
  return cli(a);
}

TaggingScores tag_scores(const Corpus& c, const fs::path& posteriors) {
  const LabelMap labels = LabelMap::load(c.labels());
  return score_tagging(tags_from_posteriors(read_posteriors(posteriors)),
                       tags_from_records(load_corpus(c.manifest(), labels)));
}

fs::path last_checkpoint(const fs::path& dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
  return dir / name;
}

void overfit(Outcome& o, const Corpus& c, const fs::path& work) {
  const auto t0 = Clock::now();
  o.require(cli({"synth", c.root.string(), "--clips", "40", "--classes", "4", "--seed", "0"}) == 0, "synth");
  o.require(cli({"extract", (c.root / "wav").string(), (c.root / "features").string()}) == 0, "extract");
  const fs::path run = work / "tag_logmel";
  o.require(train(c, c.manifest(), run, {"--mode", "tagging", "--epochs", "60", "--checkpoint-every", "5"}) == 0,
            "train");
  const fs::path post = work / "tag_logmel.csv";
  o.require(cli({"tag", last_checkpoint(run, 60).string(), "--manifest", c.manifest(), "--labels", c.labels(),
                 "--out", post.string(), "--ref", c.manifest()}) == 0,
            "tag");
  const TaggingScores s = tag_scores(c, post);
  const double elapsed = seconds_since(t0);
  o.detail << " 40 clips, 4 classes, 60 epochs (filters 16, hidden 32): train F1 " << s.f1 << " (tp " << s.tp
           << " fp " << s.fp << " fn " << s.fn << "), " << elapsed << " s";
  o.require(s.f1 >= 95.0, "F1");
  o.require(elapsed < 600.0, "runtime");
}

void localization(Outcome& o, const Corpus& c, const fs::path& work) {
  const fs::path run = work / "sed";
  o.require(train(c, c.manifest(), run, {"--mode", "sed", "--epochs", "40", "--checkpoint-every", "40"}) == 0,
            "train");
  const fs::path events = work / "sed_events.tsv";
  o.require(cli({"detect", last_checkpoint(run, 40).string(), "--manifest", c.manifest(), "--labels", c.labels(),
                 "--out", events.string(), "--track", "Oprime"}) == 0,
            "detect");
  const LabelMap labels = LabelMap::load(c.labels());
  const auto truth = read_events(c.root / "events.tsv", labels);
  const SedScores model = score_sed(read_events(events, labels), truth);

  // Chance baseline: each weakly labelled class active over the whole clip.
  std::vector<EventInterval> always;
  for (const auto& rec : load_corpus(c.manifest(), labels))
    for (std::size_t k = 0; k < rec.labels.size(); ++k)
      if (rec.labels[k]) always.push_back(EventInterval{rec.clip_id, k, 0.0, 10.0});
  const SedScores chance = score_sed(always, truth);

  o.detail << " model ER " << model.error_rate << " F1 " << model.f1 << " (S " << model.substitutions << " D "
           << model.deletions << " I " << model.insertions << " N " << model.reference_active
           << "); always-active ER " << chance.error_rate << " F1 " << chance.f1;
  o.require(model.error_rate <= 0.5, "ER");
  o.require(model.f1 >= 60.0, "F1");
  o.require(chance.error_rate - model.error_rate >= 0.25, "margin over chance");
}

bool same_values(const PosteriorTable& a, const PosteriorTable& b) {
  return a.clip_ids == b.clip_ids && a.rows == b.rows;
}

void fusion(Outcome& o, const Corpus& c, const fs::path& work) {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PosteriorTable> rand(3);
  for (auto& t : rand)
    for (int i = 0; i < 25; ++i) {
      t.clip_ids.push_back("clip_" + std::to_string(i));
      t.rows.push_back({u(rng), u(rng), u(rng), u(rng)});
    }
  const std::vector<PosteriorTable> same{rand[0], rand[0], rand[0]};
  o.require(same_values(fuse_systems(same), rand[0]), "idempotent");
  const PosteriorTable abc = fuse_systems(rand);
  const std::vector<PosteriorTable> cab{rand[2], rand[0], rand[1]};
  PosteriorTable perm = fuse_systems(cab);
  o.require(abc.rows == perm.rows, "permutation invariant");

  // Second system: MFCC features, same architecture and schedule.
  std::ifstream in(c.manifest());
  std::ofstream mf(c.root / "manifest_mfcc.csv");
  for (std::string line; std::getline(in, line);) {
    const auto pos = line.find("features/");
    if (pos != std::string::npos) line.replace(pos, 9, "mfcc/");
    mf << line << '\n';
  }
  mf.close();
  o.require(cli({"extract", (c.root / "wav").string(), (c.root / "mfcc").string(), "--feature", "mfcc"}) == 0,
            "extract mfcc");
  const fs::path run = work / "tag_mfcc";
  const std::string manifest_mfcc = (c.root / "manifest_mfcc.csv").string();
  o.require(train(c, manifest_mfcc, run, {"--mode", "tagging", "--epochs", "60", "--checkpoint-every", "5"}) == 0,
            "train mfcc");
  const fs::path post = work / "tag_mfcc.csv";
  o.require(cli({"tag", last_checkpoint(run, 60).string(), "--manifest", manifest_mfcc, "--labels", c.labels(),
                 "--out", post.string()}) == 0,
            "tag mfcc");
  const fs::path fused = work / "tag_fused.csv";
  o.require(cli({"fuse", (work / "tag_logmel.csv").string(), post.string(), "--out", fused.string()}) == 0, "fuse");

  const double f_logmel = tag_scores(c, work / "tag_logmel.csv").f1;
  const double f_mfcc = tag_scores(c, post).f1;
  const double f_fused = tag_scores(c, fused).f1;
  o.detail << " idempotent, permutation-invariant; F1 log-mel " << f_logmel << ", mfcc " << f_mfcc << ", fused "
           << f_fused;
  o.require(f_fused >= std::min(f_logmel, f_mfcc), "fused F1 >= min");
}

// --- 9 -----------------------------------------------------------------------

EventInterval ev(const std::string& clip, std::size_t c, double on, double off) {
  return EventInterval{clip, c, on, off};
}

void metric_fixtures(Outcome& o) {
  int passed = 0, total = 0;
  auto fixture = [&](bool cond) {
    ++total;
    passed += cond;
  };
  const TagSet refs{{"a", {1, 0}}, {"b", {1, 1}}};
  {
    const auto s = score_tagging(refs, refs);
    fixture(s.tp == 3 && s.fp == 0 && s.fn == 0 && s.f1 == 100.0 && s.precision == 100.0 && s.recall == 100.0);
  }
  {
    const auto s = score_tagging(TagSet{{"a", {0, 0}}, {"b", {0, 0}}}, refs);
    fixture(s.tp == 0 && s.fn == 3 && s.f1 == 0.0 && s.recall == 0.0);
  }
  {
    const auto s = score_tagging(TagSet{{"a", {1, 1}}, {"b", {1, 0}}}, refs);
    fixture(s.tp == 2 && s.fp == 1 && s.fn == 1 && s.precision == 200.0 / 3.0 && s.recall == 200.0 / 3.0);
  }
  {
    const std::vector<EventInterval> ref{ev("x", 0, 1.2, 3.5), ev("x", 1, 4.0, 9.1), ev("y", 2, 0.0, 2.0)};
    const auto s = score_sed(ref, ref);
    fixture(s.error_rate == 0.0 && s.f1 == 100.0 && s.fp == 0 && s.fn == 0);
  }
  {
    const auto s = score_sed({}, {ev("x", 0, 0.0, 10.0)});
    fixture(s.reference_active == 10 && s.deletions == 10 && s.error_rate == 1.0 && s.f1 == 0.0);
  }
  {
    const auto s = score_sed({ev("x", 1, 2.0, 5.0)}, {ev("x", 0, 2.0, 5.0)});
    fixture(s.substitutions == 3 && s.deletions == 0 && s.insertions == 0 && s.reference_active == 3 &&
            s.error_rate == 1.0);
  }
  {
    // seg0 tp; seg1 S1 D1; seg2 S1; seg3 I1.
    const auto s = score_sed({ev("x", 0, 0.0, 1.0), ev("x", 2, 1.0, 4.0)}, {ev("x", 0, 0.0, 2.0), ev("x", 1, 1.0, 3.0)});
    fixture(s.tp == 1 && s.fp == 3 && s.fn == 3 && s.substitutions == 2 && s.deletions == 1 && s.insertions == 1 &&
            s.reference_active == 4 && s.error_rate == 1.0 && s.precision == 25.0 && s.recall == 25.0);
  }
  {
    // Two predicted insertions over 2 active reference segments.
    const auto s = score_sed({ev("x", 0, 0.0, 2.0), ev("x", 1, 2.0, 4.0)}, {ev("x", 0, 0.0, 2.0)});
    fixture(s.tp == 2 && s.insertions == 2 && s.reference_active == 2 && s.error_rate == 1.0 &&
            s.precision == 50.0 && s.recall == 100.0);
  }
  o.detail << " " << passed << "/" << total << " fixtures exact";
  o.require(passed == total && total >= 5, "fixtures");
}

// --- 10 ----------------------------------------------------------------------

void determinism(Outcome& o, const Corpus& c, const fs::path& work) {
  std::vector<std::string> ckpt, scores, logs;
  for (const char* name : {"det_a", "det_b"}) {
    const fs::path run = work / name;
    o.require(train(c, c.manifest(), run, {"--epochs", "3", "--seed", "11", "--val-fraction", "0.1"}) == 0, "train");
    const fs::path post = work / (std::string(name) + ".csv");
    o.require(cli({"tag", last_checkpoint(run, 3).string(), "--manifest", c.manifest(), "--labels", c.labels(),
                   "--out", post.string(), "--ref", c.manifest()}) == 0,
              "tag");
    std::string all;
    for (std::size_t e = 1; e <= 3; ++e) all += slurp(last_checkpoint(run, e));
    ckpt.push_back(all);
    scores.push_back(slurp(post) + slurp(post.string() + ".scores"));
    logs.push_back(slurp(run / "runlog.txt"));
  }
  o.detail << " checkpoints " << (ckpt[0] == ckpt[1] ? "identical" : "differ") << " (" << ckpt[0].size()
           << " bytes), score reports " << (scores[0] == scores[1] ? "identical" : "differ") << ", run logs "
           << (logs[0] == logs[1] ? "identical" : "differ");
  o.require(!ckpt[0].empty() && ckpt[0] == ckpt[1], "checkpoints");
  o.require(!scores[0].empty() && scores[0] == scores[1], "score reports");
  o.require(logs[0] == logs[1], "run logs");
}

}  // namespace

int main() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  TempDir work("acceptance");
  const Corpus corpus{work.path / "corpus"};

  report(1, "gradient suite", gradient_suite);
  report(2, "glu / product / pooling oracles", oracle_suite);
  report(3, "clip posterior bound", convexity);
  report(4, "shape contract", shapes);
  report(5, "class balancing", balancing);
  report(6, "end-to-end overfit", [&](Outcome& o) { overfit(o, corpus, work.path); });
  report(7, "weak-to-strong localization", [&](Outcome& o) { localization(o, corpus, work.path); });
  report(8, "fusion", [&](Outcome& o) { fusion(o, corpus, work.path); });
  report(9, "metric fixtures", metric_fixtures);
  report(10, "determinism", [&](Outcome& o) { determinism(o, corpus, work.path); });

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
