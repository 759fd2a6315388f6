// src/sed_metrics.cpp

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

#include "milpool/sed_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace milpool {

namespace {

// Absorbs binary representation error in collar and overlap comparisons
// (e.g. 1.2 - 1.0 != 0.2 exactly). Far below one frame at any frame rate.
constexpr double kTimeTolerance = 1e-9;

size_t to_frame(double seconds, double frame_rate, size_t frames) {
  const long f = std::lround(seconds * frame_rate);
  return static_cast<size_t>(std::clamp<long>(f, 0, static_cast<long>(frames)));
}

}  // namespace

EventList merge_events(const EventList& events) {
  EventList sorted = events;
  std::sort(sorted.begin(), sorted.end(), [](const Event& a, const Event& b) {
    return a.cls != b.cls ? a.cls < b.cls : a.onset < b.onset;
  });
  EventList out;
  for (const Event& e : sorted) {
    if (!out.empty() && out.back().cls == e.cls && e.onset <= out.back().offset) {
      out.back().offset = std::max(out.back().offset, e.offset);
    } else {
      out.push_back(e);
    }
  }
  return out;
}

Matrix rasterize_events(const EventList& events, size_t frames, size_t classes, double frame_rate) {
  Matrix out(frames, classes, 0.0);
  for (const Event& e : events) {
    if (e.cls >= classes) throw Error("rasterize_events: class id out of range");
    const size_t begin = to_frame(e.onset, frame_rate, frames);
    const size_t end = to_frame(e.offset, frame_rate, frames);
    for (size_t t = begin; t < end; ++t) out(t, e.cls) = 1.0;
  }
  return out;
}

std::vector<int> median_filter(std::span<const int> binary, size_t window) {
  if (window == 0 || window % 2 == 0) throw Error("median_filter: window must be odd and >= 1");
  const size_t n = binary.size();
  const size_t half = window / 2;
  // Prefix sums give the count of ones in any window in O(1).
  std::vector<size_t> prefix(n + 1, 0);
  for (size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + (binary[i] != 0 ? 1 : 0);
  std::vector<int> out(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const size_t lo = i >= half ? i - half : 0;
    const size_t hi = std::min(n, i + half + 1);
    const size_t ones = prefix[hi] - prefix[lo];
    const size_t len = hi - lo;
    out[i] = 2 * ones > len ? 1 : 0;
  }
  return out;
}

EventList decode_events(const Matrix& frame_probs, double threshold,
                        std::span<const size_t> class_windows, double frame_rate) {
  const size_t frames = frame_probs.rows();
  const size_t classes = frame_probs.cols();
  if (class_windows.size() != classes) throw Error("decode_events: one window per class required");
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error("decode_events: threshold outside (0, 1)");
  EventList events;
  std::vector<int> binary(frames);
  for (size_t k = 0; k < classes; ++k) {
    for (size_t t = 0; t < frames; ++t) binary[t] = frame_probs(t, k) >= threshold ? 1 : 0;
    std::vector<int> smooth = median_filter(binary, class_windows[k]);
    size_t t = 0;
    while (t < frames) {
      if (smooth[t] == 0) {
        ++t;
        continue;
      }
      size_t start = t;
      while (t < frames && smooth[t] != 0) ++t;
      events.push_back({k, static_cast<double>(start) / frame_rate, static_cast<double>(t) / frame_rate});
    }
  }
  return events;
}

std::vector<size_t> class_windows_from_durations(std::span<const double> mean_durations,
                                                 double frame_rate, double ratio) {
  if (!(ratio > 0.0) || !(frame_rate > 0.0)) throw Error("class windows: ratio and frame rate must be > 0");
  std::vector<size_t> out;
  for (double d : mean_durations) {
    if (!(d > 0.0)) throw Error("class windows: durations must be > 0");
    long w = std::lround(ratio * d * frame_rate);
    if (w % 2 == 0) --w;
    out.push_back(static_cast<size_t>(std::max<long>(w, 1)));
  }
  return out;
}

ClassCounts& ClassCounts::operator+=(const ClassCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  nref += o.nref;
  return *this;
}

ClassScore score_from_counts(const ClassCounts& c) {
  ClassScore s;
  s.counts = c;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (c.nref > 0) {
    const double nref = static_cast<double>(c.nref);
    s.del = static_cast<double>(c.fn) / nref;
    s.ins = static_cast<double>(c.fp) / nref;
    s.er = s.del + s.ins;
  } else {
    s.del = s.ins = s.er = nan;
  }
  const size_t denom = 2 * c.tp + c.fp + c.fn;
  s.f1 = denom > 0 ? static_cast<double>(2 * c.tp) / static_cast<double>(denom) : nan;
  return s;
}

ScoreBlock score_block(std::span<const ClassCounts> per_class) {
  ScoreBlock block;
  ClassCounts total;
  double er = 0.0, f1 = 0.0, del = 0.0, ins = 0.0;
  for (const ClassCounts& c : per_class) {
    ClassScore s = score_from_counts(c);
    block.per_class.push_back(s);
    total += c;
    if (c.nref == 0) continue;
    ++block.scored_classes;
    er += s.er;
    f1 += s.f1;
    del += s.del;
    ins += s.ins;
  }
  block.macro.counts = total;
  if (block.scored_classes > 0) {
    const double n = static_cast<double>(block.scored_classes);
    block.macro.er = er / n;
    block.macro.f1 = f1 / n;
    block.macro.del = del / n;
    block.macro.ins = ins / n;
  } else {
    block.macro.er = block.macro.f1 = block.macro.del = block.macro.ins =
        std::numeric_limits<double>::quiet_NaN();
  }
  return block;
}

std::vector<ClassCounts> event_based_counts(const EventList& reference, const EventList& estimate,
                                            size_t num_classes, double onset_collar, double offset_ratio) {
  std::vector<ClassCounts> counts(num_classes);
  std::vector<bool> used(estimate.size(), false);
  for (const Event& ref : reference) {
    if (ref.cls >= num_classes) throw Error("event_based_counts: class id out of range");
    ClassCounts& c = counts[ref.cls];
    ++c.nref;
    const double offset_collar = std::max(onset_collar, offset_ratio * (ref.offset - ref.onset));
    bool matched = false;
    for (size_t j = 0; j < estimate.size() && !matched; ++j) {
      const Event& est = estimate[j];
      if (used[j] || est.cls != ref.cls) continue;
      if (std::abs(est.onset - ref.onset) <= onset_collar + kTimeTolerance &&
          std::abs(est.offset - ref.offset) <= offset_collar + kTimeTolerance) {
        used[j] = true;
        matched = true;
      }
    }
    if (matched) {
      ++c.tp;
    } else {
      ++c.fn;
    }
  }
  for (size_t j = 0; j < estimate.size(); ++j) {
    if (estimate[j].cls >= num_classes) throw Error("event_based_counts: class id out of range");
    if (!used[j]) ++counts[estimate[j].cls].fp;
  }
  return counts;
}

ScoreBlock event_based_scores(const EventList& reference, const EventList& estimate, size_t num_classes,
                              double onset_collar, double offset_ratio) {
  auto counts = event_based_counts(reference, estimate, num_classes, onset_collar, offset_ratio);
  return score_block(counts);
}

Matrix segment_activity(const EventList& events, size_t num_classes, double clip_length,
                        double segment_length) {
  if (!(segment_length > 0.0) || !(clip_length > 0.0)) throw Error("segment_activity: bad lengths");
  const size_t segments = static_cast<size_t>(std::ceil(clip_length / segment_length - kTimeTolerance));
  Matrix out(segments, num_classes, 0.0);
  for (const Event& e : events) {
    if (e.cls >= num_classes) throw Error("segment_activity: class id out of range");
    for (size_t s = 0; s < segments; ++s) {
      const double lo = static_cast<double>(s) * segment_length;
      const double hi = lo + segment_length;
      if (std::min(e.offset, hi) - std::max(e.onset, lo) > kTimeTolerance) out(s, e.cls) = 1.0;
    }
  }
  return out;
}

std::vector<ClassCounts> segment_based_counts(const EventList& reference, const EventList& estimate,
                                              size_t num_classes, double clip_length, double segment_length) {
  Matrix ref = segment_activity(reference, num_classes, clip_length, segment_length);
  Matrix est = segment_activity(estimate, num_classes, clip_length, segment_length);
  std::vector<ClassCounts> counts(num_classes);
  for (size_t s = 0; s < ref.rows(); ++s) {
    for (size_t k = 0; k < num_classes; ++k) {
      const bool r = ref(s, k) != 0.0;
      const bool e = est(s, k) != 0.0;
      if (r) ++counts[k].nref;
      if (r && e) ++counts[k].tp;
      if (r && !e) ++counts[k].fn;
      if (!r && e) ++counts[k].fp;
    }
  }
  return counts;
}

ScoreBlock segment_based_scores(const EventList& reference, const EventList& estimate, size_t num_classes,
                                double clip_length, double segment_length) {
  auto counts = segment_based_counts(reference, estimate, num_classes, clip_length, segment_length);
  return score_block(counts);
}

void add_counts(std::vector<ClassCounts>& into, std::span<const ClassCounts> counts) {
  if (into.empty()) into.resize(counts.size());
  if (into.size() != counts.size()) throw Error("add_counts: class count mismatch");
  for (size_t k = 0; k < counts.size(); ++k) into[k] += counts[k];
}

namespace {

void write_row(std::ostream& out, const std::string& name, const ClassScore& s) {
  out << name << ',' << s.er << ',' << s.f1 << ',' << s.del << ',' << s.ins << ',' << s.counts.tp << ','
      << s.counts.fp << ',' << s.counts.fn << ',' << s.counts.nref << '\n';
}

}  // namespace

void write_score_csv(std::ostream& out, const ScoreBlock& block) {
  out << "class,ER,F1,DEL,INS,Ntp,Nfp,Nfn,Nref\n";
  for (size_t k = 0; k < block.per_class.size(); ++k) write_row(out, std::to_string(k), block.per_class[k]);
  write_row(out, "macro", block.macro);
}

namespace {

std::vector<ReliabilityBin> make_bins(size_t bins) {
  std::vector<ReliabilityBin> out(bins);
  for (size_t b = 0; b < bins; ++b) {
    out[b].lower = static_cast<double>(b) / static_cast<double>(bins);
    out[b].upper = static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  return out;
}

size_t bin_of(double v, size_t bins) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return std::min(static_cast<size_t>(clamped * static_cast<double>(bins)), bins - 1);
}

void finish(std::vector<ReliabilityBin>& bins, const std::vector<double>& sums,
            const std::vector<size_t>& correct) {
  for (size_t b = 0; b < bins.size(); ++b) {
    if (bins[b].count == 0) continue;
    const double n = static_cast<double>(bins[b].count);
    bins[b].mean_value = sums[b] / n;
    bins[b].accuracy = static_cast<double>(correct[b]) / n;
  }
}

}  // namespace

ReliabilityReport confidence_reliability(std::span<const Matrix> frame_probs,
                                         std::span<const Matrix> confidence,
                                         std::span<const Matrix> truth, size_t bins) {
  if (bins < 2) throw Error("confidence_reliability: need at least two bins");
  if (frame_probs.size() != confidence.size() || frame_probs.size() != truth.size())
    throw Error("confidence_reliability: clip counts differ");
  ReliabilityReport rep{make_bins(bins), make_bins(bins), make_bins(bins)};
  std::vector<double> sum_all(bins, 0.0), sum_pos_c(bins, 0.0), sum_pos_p(bins, 0.0);
  std::vector<size_t> ok_all(bins, 0), ok_pos_c(bins, 0), ok_pos_p(bins, 0);
  for (size_t clip = 0; clip < frame_probs.size(); ++clip) {
    const Matrix& p = frame_probs[clip];
    const Matrix& c = confidence[clip];
    const Matrix& t = truth[clip];
    if (!p.same_shape(c) || !p.same_shape(t)) throw Error("confidence_reliability: shape mismatch");
    for (size_t i = 0; i < p.size(); ++i) {
      const double prob = p.values()[i];
      const double conf = c.values()[i];
      const bool positive = prob >= 0.5;
      const bool correct = positive == (t.values()[i] >= 0.5);
      size_t b = bin_of(conf, bins);
      rep.by_confidence[b].count++;
      sum_all[b] += conf;
      ok_all[b] += correct ? 1 : 0;
      if (!positive) continue;
      rep.positive_by_confidence[b].count++;
      sum_pos_c[b] += conf;
      ok_pos_c[b] += correct ? 1 : 0;
      b = bin_of(prob, bins);
      rep.positive_by_posterior[b].count++;
      sum_pos_p[b] += prob;
      ok_pos_p[b] += correct ? 1 : 0;
    }
  }
  finish(rep.by_confidence, sum_all, ok_all);
  finish(rep.positive_by_confidence, sum_pos_c, ok_pos_c);
  finish(rep.positive_by_posterior, sum_pos_p, ok_pos_p);
  return rep;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

void write_reliability_csv(std::ostream& out, std::span<const ReliabilityBin> bins) {
  out << "bin_lower,bin_upper,mean_value,accuracy,count\n";
  for (const auto& b : bins)
    out << b.lower << ',' << b.upper << ',' << b.mean_value << ',' << b.accuracy << ',' << b.count << '\n';
}

}  // namespace milpool
