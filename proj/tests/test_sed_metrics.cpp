// tests/test_sed_metrics.cpp

// Copyright 2026  milpool authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "milpool/sed_metrics.hpp"

using namespace milpool;

namespace {

std::vector<int> mf(std::vector<int> v, size_t w) { return median_filter(v, w); }

// Naive O(n log n) average-rank Spearman used as an oracle.
double spearman_reference(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
      double less = 0.0, equal = 0.0;
      for (double u : v) {
        if (u < v[i]) less += 1.0;
        if (u == v[i]) equal += 1.0;
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) mx += rx[i] / n, my += ry[i] / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

EventList random_events(Rng& rng, size_t classes, double clip_len, size_t count) {
  EventList out;
  for (size_t i = 0; i < count; ++i) {
    const double on = std::round(rng.uniform() * (clip_len - 1.0) * 25.0) / 25.0;
    const double len = 0.2 + std::round(rng.uniform() * 40.0) / 25.0;
    out.push_back({rng.uniform_int(classes), on, std::min(clip_len, on + len)});
  }
  return out;
}

}  // namespace

TEST_CASE("median filter") {
  CHECK(mf({0, 1, 0}, 3) == std::vector<int>{0, 0, 0});
  CHECK(mf({1, 1, 0, 1, 1}, 3) == std::vector<int>{1, 1, 1, 1, 1});
  for (size_t w : {1, 3, 5, 9, 21}) CHECK(mf({1, 1, 1, 1, 1, 1}, w) == std::vector<int>(6, 1));
  CHECK(mf({0, 1, 1, 0}, 1) == std::vector<int>{0, 1, 1, 0});
  CHECK_THROWS_AS(mf({0, 1}, 2), Error);
  CHECK_THROWS_AS(mf({0, 1}, 0), Error);
}

TEST_CASE("event decoding") {
  const std::vector<size_t> one{1, 1};
  CHECK(decode_events(Matrix(30, 2, 0.0), 0.5, one, 25.0).empty());

  Matrix p(30, 2, 0.0);
  for (size_t i = 10; i < 20; ++i) p(i, 1) = 1.0;
  const EventList e = decode_events(p, 0.5, one, 25.0);
  REQUIRE(e.size() == 1);
  CHECK(e[0].cls == 1);
  CHECK(e[0].onset == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(e[0].offset == doctest::Approx(0.8).epsilon(1e-12));

  Matrix spike(30, 2, 0.0);
  spike(7, 0) = 0.9;
  const std::vector<size_t> three{3, 3};
  CHECK(decode_events(spike, 0.5, three, 25.0).empty());
  CHECK(decode_events(spike, 0.5, one, 25.0).size() == 1);
  const std::vector<size_t> wrong{1};
  CHECK_THROWS_AS(decode_events(p, 0.5, wrong, 25.0), Error);
}

TEST_CASE("class windows from durations") {
  const std::vector<double> d{1.2, 0.01, 3.0};
  const auto w = class_windows_from_durations(d, 25.0);
  CHECK(w == std::vector<size_t>{9, 1, 25});
  const auto w2 = class_windows_from_durations(d, 25.0, 2.0 / 3.0);
  CHECK(w2[0] == 19);
  CHECK(w2[2] == 49);
  for (size_t v : w2) CHECK(v % 2 == 1);
}

TEST_CASE("event collar cases") {
  const EventList ref{{0, 1.0, 2.0}};
  const auto tp = event_based_counts(ref, {{0, 1.1, 2.05}}, 1);
  CHECK(tp[0] == ClassCounts{1, 0, 0, 1});
  const auto miss = event_based_counts(ref, {{0, 1.35, 2.0}}, 1);
  CHECK(miss[0] == ClassCounts{0, 1, 1, 1});

  // Long events get the proportional offset collar.
  const EventList long_ref{{0, 0.0, 5.0}};
  CHECK(event_based_counts(long_ref, {{0, 0.1, 5.9}}, 1)[0].tp == 1);
  CHECK(event_based_counts(long_ref, {{0, 0.1, 6.1}}, 1)[0].tp == 0);
  // Wrong class never matches.
  CHECK(event_based_counts(ref, {{1, 1.0, 2.0}}, 2)[0] == ClassCounts{0, 0, 1, 1});
}

TEST_CASE("greedy matching uses each estimate once") {
  const EventList ref{{0, 1.0, 2.0}, {0, 1.05, 2.0}};
  const EventList est{{0, 1.0, 2.0}};
  CHECK(event_based_counts(ref, est, 1)[0] == ClassCounts{1, 0, 1, 2});
}

TEST_CASE("count formulas") {
  const ClassScore s = score_from_counts({1, 1, 1, 2});
  CHECK(s.del == 0.5);
  CHECK(s.ins == 0.5);
  CHECK(s.er == 1.0);
  CHECK(s.f1 == 0.5);
  const ScoreBlock perfect = event_based_scores({{0, 1.0, 2.0}}, {{0, 1.0, 2.0}}, 1);
  CHECK(perfect.macro.er == 0.0);
  CHECK(perfect.macro.f1 == 1.0);
}

TEST_CASE("error rate is deletions plus insertions") {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto ref = random_events(rng, 3, 10.0, 1 + rng.uniform_int(8));
    const auto est = random_events(rng, 3, 10.0, rng.uniform_int(8));
    const auto block = event_based_scores(ref, est, 3);
    for (const ClassScore& s : block.per_class) {
      if (s.counts.nref == 0) continue;
      CHECK(s.er == s.del + s.ins);
      CHECK(s.counts.tp + s.counts.fn == s.counts.nref);
    }
    const auto seg = segment_based_scores(ref, est, 3, 10.0);
    for (const ClassScore& s : seg.per_class)
      if (s.counts.nref > 0) CHECK(s.er == s.del + s.ins);
  }
}

TEST_CASE("macro average skips classes without references") {
  const EventList ref{{0, 1.0, 2.0}};
  const EventList est{{0, 1.0, 2.0}, {2, 3.0, 4.0}};
  const ScoreBlock b = event_based_scores(ref, est, 3);
  CHECK(b.scored_classes == 1);
  CHECK(b.macro.er == 0.0);
  CHECK(b.per_class[2].counts.fp == 1);
}

TEST_CASE("scoring is additive over clip concatenation") {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto r1 = random_events(rng, 2, 10.0, 4), e1 = random_events(rng, 2, 10.0, 4);
    const auto r2 = random_events(rng, 2, 10.0, 4), e2 = random_events(rng, 2, 10.0, 4);
    std::vector<ClassCounts> sum = event_based_counts(r1, e1, 2);
    add_counts(sum, event_based_counts(r2, e2, 2));
    std::vector<ClassCounts> seg = segment_based_counts(r1, e1, 2, 10.0);
    add_counts(seg, segment_based_counts(r2, e2, 2, 10.0));

    // Offset the second clip past the first with a gap wider than any collar.
    auto shifted = [](EventList l, double by) {
      for (Event& e : l) e.onset += by, e.offset += by;
      return l;
    };
    EventList rc = r1, ec = e1;
    for (const Event& e : shifted(r2, 20.0)) rc.push_back(e);
    for (const Event& e : shifted(e2, 20.0)) ec.push_back(e);
    CHECK(event_based_counts(rc, ec, 2) == sum);

    // Segments line up when the offset is a whole clip.
    EventList rs = r1, es = e1;
    for (const Event& e : shifted(r2, 10.0)) rs.push_back(e);
    for (const Event& e : shifted(e2, 10.0)) es.push_back(e);
    CHECK(segment_based_counts(rs, es, 2, 20.0) == seg);
  }
}

TEST_CASE("segment scoring") {
  const EventList ref{{0, 1.2, 2.8}};
  const EventList est{{0, 2.2, 3.8}};
  const auto c = segment_based_counts(ref, est, 1, 5.0);
  CHECK(c[0] == ClassCounts{1, 1, 1, 2});
  CHECK(score_from_counts(c[0]).f1 == 0.5);

  const ScoreBlock same = segment_based_scores(ref, ref, 1, 5.0);
  CHECK(same.macro.er == 0.0);
  CHECK(same.macro.f1 == 1.0);

  const Matrix act = segment_activity({{0, 0.95, 1.05}}, 1, 5.0);
  REQUIRE(act.rows() == 5);
  CHECK(act(0, 0) == 1.0);
  CHECK(act(1, 0) == 1.0);
  CHECK(act(2, 0) == 0.0);
}

TEST_CASE("decoding rasterized truth recovers the events") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    // Frame-aligned events, one per class so runs never merge.
    EventList truth;
    for (size_t k = 0; k < 3; ++k) {
      if (rng.uniform() < 0.3) continue;
      const size_t begin = rng.uniform_int(200);
      const size_t len = 1 + rng.uniform_int(50);
      truth.push_back({k, begin / 25.0, std::min<size_t>(250, begin + len) / 25.0});
    }
    const Matrix r = rasterize_events(truth, 250, 3, 25.0);
    const std::vector<size_t> ones(3, 1);
    const EventList back = decode_events(r, 0.5, ones, 25.0);
    REQUIRE(back.size() == truth.size());
    for (size_t i = 0; i < truth.size(); ++i) {
      CHECK(back[i].cls == truth[i].cls);
      CHECK(back[i].onset == doctest::Approx(truth[i].onset).epsilon(1e-12));
      CHECK(back[i].offset == doctest::Approx(truth[i].offset).epsilon(1e-12));
    }
    // Macro ER is undefined without reference events.
    if (!truth.empty()) CHECK(event_based_scores(truth, back, 3).macro.er == 0.0);
  }
}

TEST_CASE("reliability bins") {
  const Matrix probs = Matrix::from_rows({{0.9, 0.1}, {0.8, 0.2}});
  const Matrix truth = Matrix::from_rows({{1, 0}, {1, 0}});
  const Matrix conf(2, 2, 1.0);
  const auto rep = confidence_reliability(std::span(&probs, 1), std::span(&conf, 1), std::span(&truth, 1));
  size_t occupied = 0;
  for (const auto& b : rep.by_confidence)
    if (b.count > 0) {
      ++occupied;
      CHECK(b.accuracy == 1.0);
      CHECK(b.count == 4);
    }
  CHECK(occupied == 1);
  CHECK(rep.by_confidence.size() == 10);

  Rng rng(4);
  std::vector<Matrix> p, c, t;
  for (int i = 0; i < 5; ++i) {
    Matrix a(20, 3), b(20, 3), d(20, 3);
    for (size_t j = 0; j < a.size(); ++j) {
      a.values()[j] = rng.uniform();
      b.values()[j] = rng.uniform();
      d.values()[j] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    p.push_back(a), c.push_back(b), t.push_back(d);
  }
  const auto r = confidence_reliability(p, c, t);
  size_t total = 0, positives = 0, pos_posterior = 0;
  for (const auto& b : r.by_confidence) total += b.count;
  for (const auto& b : r.positive_by_confidence) positives += b.count;
  for (const auto& b : r.positive_by_posterior) pos_posterior += b.count;
  CHECK(total == 300);
  CHECK(positives == pos_posterior);
  size_t expect_pos = 0;
  for (const Matrix& m : p)
    for (double v : m.values()) expect_pos += v >= 0.5;
  CHECK(positives == expect_pos);
}

TEST_CASE("spearman") {
  CHECK(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 3, 2, 1}) == doctest::Approx(-1.0));
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(12), y(12);
    // Coarse values force ties.
    for (double& v : x) v = static_cast<double>(rng.uniform_int(5));
    for (double& v : y) v = static_cast<double>(rng.uniform_int(5));
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) continue;
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) continue;
    CHECK(spearman(x, y) == doctest::Approx(spearman_reference(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("score csv layout") {
  const ScoreBlock b = event_based_scores({{0, 1.0, 2.0}}, {{0, 1.0, 2.0}}, 2);
  std::ostringstream out;
  write_score_csv(out, b);
  const std::string text = out.str();
  CHECK(text.rfind("class,", 0) == 0);
  CHECK(text.find("macro") != std::string::npos);
}

TEST_CASE("merging same-class events") {
  const EventList in{{1, 2.0, 3.0}, {0, 0.5, 1.0}, {1, 2.5, 4.0}, {0, 1.0, 1.5}, {0, 3.0, 3.2}, {2, 0.0, 1.0}};
  const EventList out = merge_events(in);
  REQUIRE(out.size() == 4);
  CHECK((out[0].cls == 0 && out[0].onset == 0.5 && out[0].offset == 1.5));
  CHECK((out[1].cls == 0 && out[1].onset == 3.0 && out[1].offset == 3.2));
  CHECK((out[2].cls == 1 && out[2].onset == 2.0 && out[2].offset == 4.0));
  CHECK((out[3].cls == 2 && out[3].onset == 0.0 && out[3].offset == 1.0));
  CHECK(merge_events({}).empty());
}
