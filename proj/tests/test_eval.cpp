// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "gcrnn/errors.hpp"
#include "gcrnn/eval.hpp"
#include "test_util.hpp"

using namespace gcrnn;
using namespace gcrnn::test;

namespace {

constexpr double kHop = 10.0 / 240.0;

Tensor track_with(std::size_t T, std::size_t C, std::initializer_list<std::pair<std::size_t, std::size_t>> runs,
                  std::size_t cls = 0, double on = 0.9, double off = 0.1) {
  Tensor t({T, C}, off);
  for (auto [a, b] : runs)
    for (std::size_t i = a; i <= b; ++i) t.at(i, cls) = on;
  return t;
}

EventInterval ev(const std::string& clip, std::size_t c, double on, double off) {
  return EventInterval{clip, c, on, off};
}

}  // namespace

TEST_CASE("tag_clip threshold rule") {
  const std::vector<double> half{0.5};
  CHECK(tag_clip("a", half, 0.5).tags[0] == 1);
  CHECK(tag_clip("a", half, 0.3).tags[0] == 1);
  CHECK(tag_clip("a", half, 0.7).tags[0] == 0);
  const std::vector<double> zeros(5, 0.0);
  for (auto t : tag_clip("a", zeros).tags) CHECK(t == 0);
  CHECK_THROWS_AS(tag_clip("a", half, 0.0), ConfigError);
  CHECK_THROWS_AS(tag_clip("a", half, 1.0), ConfigError);
}

TEST_CASE("extract_events examples") {
  CHECK(extract_events(Tensor({240, 3}, 0.2), kHop).empty());

  const auto one = extract_events(track_with(240, 2, {{50, 150}}), kHop, {}, "clip");
  REQUIRE(one.size() == 1);
  CHECK(one[0].clip_id == "clip");
  CHECK(one[0].class_id == 0);
  CHECK(one[0].onset == doctest::Approx(2.083).epsilon(1e-3));
  CHECK(one[0].offset == doctest::Approx(6.292).epsilon(1e-3));

  CHECK(extract_events(track_with(240, 1, {{100, 100}}), kHop).empty());

  PostprocessConfig even;
  even.median_window = 10;
  CHECK_THROWS_AS(extract_events(Tensor({240, 1}), kHop, even), ConfigError);
}

TEST_CASE("median filter replicates edges") {
  const std::vector<std::uint8_t> bits{1, 1, 0, 0, 0, 0, 1, 0, 1, 1};
  const auto f = median_filter(bits, 3);
  CHECK(f == std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0, 0, 1, 1, 1});
  CHECK(median_filter(bits, 1) == bits);
}

TEST_CASE("short runs are dropped and near runs merged") {
  PostprocessConfig cfg;
  cfg.median_window = 1;
  // 3 frames = 0.125 s < 0.2 s: dropped.
  CHECK(extract_events(track_with(240, 1, {{10, 12}}), kHop, cfg).empty());
  // Gap of 4 frames (0.167 s) merges; gap of 10 frames does not.
  const auto merged = extract_events(track_with(240, 1, {{10, 29}, {34, 60}}), kHop, cfg);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].onset == doctest::Approx(10 * kHop));
  CHECK(merged[0].offset == doctest::Approx(61 * kHop));
  CHECK(extract_events(track_with(240, 1, {{10, 29}, {40, 60}}), kHop, cfg).size() == 2);
}

TEST_CASE("events are sorted by onset and disjoint per class") {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 30; ++rep) {
    const Tensor t = random_tensor({240, 4}, rng, 0.0, 1.0);
    PostprocessConfig cfg;
    cfg.median_window = 5;
    const auto events = extract_events(t, kHop, cfg);
    for (std::size_t i = 1; i < events.size(); ++i) CHECK(events[i - 1].onset <= events[i].onset);
    for (std::size_t i = 0; i < events.size(); ++i) {
      CHECK(events[i].onset < events[i].offset);
      for (std::size_t j = i + 1; j < events.size(); ++j)
        if (events[i].class_id == events[j].class_id)
          CHECK((events[i].offset <= events[j].onset || events[j].offset <= events[i].onset));
    }
  }
}

TEST_CASE("raising the threshold never adds active frames") {
  std::mt19937_64 rng(42);
  const Tensor t = random_tensor({240, 3}, rng, 0.0, 1.0);
  for (double lo = 0.1; lo < 0.9; lo += 0.1) {
    const auto a = binarize(t, lo), b = binarize(t, lo + 0.1);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 240; ++i) CHECK(b[c][i] <= a[c][i]);
  }
}

TEST_CASE("score_tagging fixtures") {
  const TagSet refs{{"a", {1, 0}}, {"b", {1, 1}}};
  SUBCASE("perfect") {
    const auto s = score_tagging(refs, refs);
    CHECK(s.f1 == 100.0);
    CHECK(s.precision == 100.0);
    CHECK(s.recall == 100.0);
  }
  SUBCASE("predict nothing") {
    const auto s = score_tagging(TagSet{{"a", {0, 0}}, {"b", {0, 0}}}, refs);
    CHECK(s.recall == 0.0);
    CHECK(s.precision == 0.0);
    CHECK(s.f1 == 0.0);
  }
  SUBCASE("TP=2 FP=1 FN=1") {
    const auto s = score_tagging(TagSet{{"a", {1, 1}}, {"b", {1, 0}}}, refs);
    CHECK(s.tp == 2);
    CHECK(s.fp == 1);
    CHECK(s.fn == 1);
    CHECK(s.precision == doctest::Approx(66.6667).epsilon(1e-5));
    CHECK(s.recall == doctest::Approx(66.6667).epsilon(1e-5));
    CHECK(s.f1 == doctest::Approx(66.6667).epsilon(1e-5));
  }
  SUBCASE("clip set mismatch lists both sides") {
    try {
      score_tagging(TagSet{{"a", {1, 0}}, {"c", {0, 0}}}, refs);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("pred-only:c") != std::string::npos);
      CHECK(msg.find("ref-only:b") != std::string::npos);
    }
  }
}

TEST_CASE("score_tagging equals a brute-force confusion count") {
  std::mt19937_64 rng(43);
  std::bernoulli_distribution coin(0.4);
  for (int rep = 0; rep < 50; ++rep) {
    TagSet p, r;
    std::size_t tp = 0, fp = 0, fn = 0;
    for (int clip = 0; clip < 6; ++clip) {
      std::vector<std::uint8_t> a(4), b(4);
      for (int c = 0; c < 4; ++c) {
        a[c] = coin(rng);
        b[c] = coin(rng);
        tp += a[c] && b[c];
        fp += a[c] && !b[c];
        fn += !a[c] && b[c];
      }
      p["c" + std::to_string(clip)] = a;
      r["c" + std::to_string(clip)] = b;
    }
    const auto s = score_tagging(p, r);
    CHECK(s.tp == tp);
    CHECK(s.fp == fp);
    CHECK(s.fn == fn);
    const double P = tp + fp ? 100.0 * tp / (tp + fp) : 0.0;
    const double R = tp + fn ? 100.0 * tp / (tp + fn) : 0.0;
    CHECK(s.f1 == doctest::Approx(P + R > 0 ? 2 * P * R / (P + R) : 0.0));
  }
}

TEST_CASE("score_sed fixtures") {
  SUBCASE("identical") {
    const std::vector<EventInterval> ref{ev("x", 0, 1.2, 3.5), ev("x", 1, 4.0, 9.1), ev("y", 2, 0.0, 2.0)};
    const auto s = score_sed(ref, ref);
    CHECK(s.error_rate == 0.0);
    CHECK(s.f1 == 100.0);
  }
  SUBCASE("no predictions over 10 active segments") {
    const auto s = score_sed({}, {ev("x", 0, 0.0, 10.0)});
    CHECK(s.reference_active == 10);
    CHECK(s.deletions == 10);
    CHECK(s.error_rate == 1.0);
    CHECK(s.f1 == 0.0);
  }
  SUBCASE("substitution table") {
    const auto s = score_sed({ev("x", 1, 2.0, 5.0)}, {ev("x", 0, 2.0, 5.0)});
    CHECK(s.substitutions == 3);
    CHECK(s.deletions == 0);
    CHECK(s.insertions == 0);
    CHECK(s.reference_active == 3);
    CHECK(s.error_rate == 1.0);
  }
  SUBCASE("mixed S, D and I") {
    // Segments 0..3 of one clip. ref: A 0-2, B 1-3. pred: A 0-1, C 1-4.
    // seg0: ref{A} pred{A} -> tp. seg1: ref{A,B} pred{C} -> fn2 fp1: S1 D1.
    // seg2: ref{B} pred{C} -> S1. seg3: ref{} pred{C} -> I1.
    const auto s = score_sed({ev("x", 0, 0.0, 1.0), ev("x", 2, 1.0, 4.0)},
                             {ev("x", 0, 0.0, 2.0), ev("x", 1, 1.0, 3.0)});
    CHECK(s.tp == 1);
    CHECK(s.fp == 3);
    CHECK(s.fn == 3);
    CHECK(s.substitutions == 2);
    CHECK(s.deletions == 1);
    CHECK(s.insertions == 1);
    CHECK(s.reference_active == 4);
    CHECK(s.error_rate == 1.0);
    CHECK(s.precision == 25.0);
    CHECK(s.recall == 25.0);
  }
  SUBCASE("empty on both sides") {
    const auto s = score_sed({}, {});
    CHECK(s.error_rate == 0.0);
    CHECK(s.f1 == 0.0);
  }
  SUBCASE("segment length must be positive") {
    CHECK_THROWS_AS(score_sed({}, {}, 0.0), ConfigError);
  }
}

TEST_CASE("event and report files") {
  TempDir dir("events");
  const LabelMap labels({"car", "bus"});
  const std::vector<EventInterval> events{ev("a", 1, 0.5, 1.25), ev("b", 0, 2.0004, 3.9996)};
  write_events(dir.path / "e.tsv", events, labels);
  const auto back = read_events(dir.path / "e.tsv", labels);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == events[0]);
  CHECK(back[1].onset == 2.0);
  CHECK(back[1].offset == 4.0);
  std::ofstream(dir.path / "bad.tsv") << "a\t1.0\t2.0\tspeech\n";
  CHECK_THROWS_AS(read_events(dir.path / "bad.tsv", labels), ValidationError);

  std::ostringstream os;
  write_sed_report(os, score_sed({}, {ev("x", 0, 0.0, 10.0)}));
  const std::string report = os.str();
  CHECK(report.find("er=1") != std::string::npos);
  CHECK(report.find("D=10") != std::string::npos);
  CHECK(report.find("N=10") != std::string::npos);

  write_curves(dir.path / "c.csv", Tensor({3, 2}, 0.5), Tensor({3, 2}, 0.5), Tensor({3, 2}, 0.25), labels);
  std::ifstream in(dir.path / "c.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "frame,class_name,O,Z_loc,O_prime");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6);
}
