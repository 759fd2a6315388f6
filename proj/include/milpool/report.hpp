// include/milpool/report.hpp

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

#ifndef MILPOOL_REPORT_HPP_
#define MILPOOL_REPORT_HPP_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "milpool/pipeline.hpp"

namespace milpool {

// Static SVG plots. Every plot is written next to a CSV holding exactly the
// plotted numbers.

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct AxisRange {
  double lo = 0.0;
  double hi = 0.0;
  bool fixed = false;
};

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, bool identity_line = false,
                           AxisRange x_range = {}, AxisRange y_range = {});

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& labels, const std::vector<double>& values);

/// Evaluation results as stored next to a checkpoint by `milpool evaluate`.
Json to_json(const ClassScore& s);
Json to_json(const Evaluation& e);
Json to_json(const ReliabilityBin& b);
std::vector<ReliabilityBin> reliability_bins_from_json(const Json& j);

/// n_curves.svg / n_curves.csv: one pooling-exponent curve per run and exponent.
void write_n_curve_report(const std::filesystem::path& dir,
                          const std::vector<std::pair<std::string, StageReport>>& runs);

/// <prefix>_confidence.{svg,csv} and <prefix>_posterior.{svg,csv}: binned
/// accuracy against mean confidence (all predictions) and against mean
/// posterior (positive predictions), each with the y = x reference line.
void write_reliability_report(const std::filesystem::path& dir, const std::string& prefix,
                              const ReliabilityReport& reliability);

struct ComparisonRow {
  std::string method;
  std::string run;
  ClassScore event;  // macro scores
};

/// er_comparison.svg / er_comparison.csv.
void write_comparison_report(const std::filesystem::path& dir, const std::vector<ComparisonRow>& rows);

}  // namespace milpool

#endif  // MILPOOL_REPORT_HPP_
