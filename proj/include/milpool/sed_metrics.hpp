// include/milpool/sed_metrics.hpp

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

#ifndef MILPOOL_SED_METRICS_HPP_
#define MILPOOL_SED_METRICS_HPP_

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "milpool/numerics.hpp"

namespace milpool {

struct Event {
  size_t cls = 0;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds

  friend bool operator==(const Event&, const Event&) = default;
};

using EventList = std::vector<Event>;

/// Unions touching or overlapping events of the same class. Output is sorted
/// by class, then onset.
EventList merge_events(const EventList& events);

/// Frame i of class k is active when some event of class k covers
/// [i / frame_rate, (i + 1) / frame_rate) by frame index rounding.
Matrix rasterize_events(const EventList& events, size_t frames, size_t classes, double frame_rate);

/// Binary median filter. The window shrinks at the clip edges; on a tie
/// (even truncated window) the lower median, 0, wins.
std::vector<int> median_filter(std::span<const int> binary, size_t window);

/// Threshold, per-class median filter, then maximal runs become events.
EventList decode_events(const Matrix& frame_probs, double threshold,
                        std::span<const size_t> class_windows, double frame_rate);

inline constexpr double kDefaultWindowRatio = 1.0 / 3.0;

/// round(ratio * duration * frame_rate), lowered to the nearest odd value, at least 1.
std::vector<size_t> class_windows_from_durations(std::span<const double> mean_durations,
                                                 double frame_rate, double ratio = kDefaultWindowRatio);

struct ClassCounts {
  size_t tp = 0;
  size_t fp = 0;
  size_t fn = 0;
  size_t nref = 0;

  ClassCounts& operator+=(const ClassCounts& o);
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct ClassScore {
  double er = 0.0;
  double f1 = 0.0;
  double del = 0.0;
  double ins = 0.0;
  ClassCounts counts;
};

/// Per-class scores plus their macro average. The macro row averages class
/// ER/F1/DEL/INS over classes with nref > 0; its counts are the class sums.
struct ScoreBlock {
  std::vector<ClassScore> per_class;
  ClassScore macro;
  size_t scored_classes = 0;
};

struct ScoreReport {
  ScoreBlock event;
  std::optional<ScoreBlock> segment;
};

ClassScore score_from_counts(const ClassCounts& counts);
ScoreBlock score_block(std::span<const ClassCounts> per_class);

inline constexpr double kOnsetCollar = 0.2;
inline constexpr double kOffsetCollarRatio = 0.2;
inline constexpr double kSegmentLength = 1.0;

/// Event-based counts for one clip: greedy matching in reference order; an
/// estimate matches iff |onset diff| <= onset_collar and |offset diff| <=
/// max(onset_collar, offset_ratio * reference duration).
std::vector<ClassCounts> event_based_counts(const EventList& reference, const EventList& estimate,
                                            size_t num_classes, double onset_collar = kOnsetCollar,
                                            double offset_ratio = kOffsetCollarRatio);

ScoreBlock event_based_scores(const EventList& reference, const EventList& estimate, size_t num_classes,
                              double onset_collar = kOnsetCollar, double offset_ratio = kOffsetCollarRatio);

/// Segment activity: a segment is active when an event overlaps it by a
/// positive amount. Result is (num_segments x num_classes) 0/1.
Matrix segment_activity(const EventList& events, size_t num_classes, double clip_length,
                        double segment_length = kSegmentLength);

std::vector<ClassCounts> segment_based_counts(const EventList& reference, const EventList& estimate,
                                              size_t num_classes, double clip_length,
                                              double segment_length = kSegmentLength);

ScoreBlock segment_based_scores(const EventList& reference, const EventList& estimate, size_t num_classes,
                                double clip_length, double segment_length = kSegmentLength);

void add_counts(std::vector<ClassCounts>& into, std::span<const ClassCounts> counts);

/// CSV with header: class,ER,F1,DEL,INS,Ntp,Nfp,Nfn,Nref. Last row is "macro".
void write_score_csv(std::ostream& out, const ScoreBlock& block);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_value = 0.0;
  double accuracy = 0.0;
  size_t count = 0;
};

struct ReliabilityReport {
  /// All frame x class predictions binned by confidence.
  std::vector<ReliabilityBin> by_confidence;
  /// Positive predictions (prob >= 0.5) binned by confidence.
  std::vector<ReliabilityBin> positive_by_confidence;
  /// Positive predictions binned by their posterior.
  std::vector<ReliabilityBin> positive_by_posterior;
};

/// Predictions are binarized at 0.5 and compared with `truth` (0/1 frames).
/// Bins are equal-width over [0, 1]; value 1 falls in the last bin.
ReliabilityReport confidence_reliability(std::span<const Matrix> frame_probs,
                                         std::span<const Matrix> confidence,
                                         std::span<const Matrix> truth, size_t bins = 10);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

void write_reliability_csv(std::ostream& out, std::span<const ReliabilityBin> bins);

}  // namespace milpool

#endif  // MILPOOL_SED_METRICS_HPP_
