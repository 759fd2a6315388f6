// src/report.cpp

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

#include "milpool/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace milpool {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

AxisRange auto_range(const std::vector<Series>& series, bool use_x, AxisRange given) {
  if (given.fixed) return given;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : series)
    for (double v : use_x ? s.x : s.y)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (!std::isfinite(lo)) return {0.0, 1.0, true};
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad, true};
}

void svg_open(std::ostringstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
}

void axes(std::ostringstream& out, const std::string& x_label, const std::string& y_label, AxisRange xr,
          AxisRange yr, bool numeric_x) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double f = i / 5.0;
    const double py = y0 - f * (y0 - y1);
    out << "<line x1=\"" << x0 - 4 << "\" y1=\"" << py << "\" x2=\"" << x0 << "\" y2=\"" << py
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">"
        << num(yr.lo + f * (yr.hi - yr.lo)) << "</text>\n";
    if (numeric_x) {
      const double px = x0 + f * (x1 - x0);
      out << "<line x1=\"" << px << "\" y1=\"" << y0 << "\" x2=\"" << px << "\" y2=\"" << y0 + 4
          << "\" stroke=\"black\"/>\n";
      out << "<text x=\"" << px << "\" y=\"" << y0 + 18 << "\" text-anchor=\"middle\">"
          << num(xr.lo + f * (xr.hi - xr.lo)) << "</text>\n";
    }
  }
  out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  out << "<text transform=\"translate(18," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(y_label) << "</text>\n";
}

void write_file(const fs::path& path, const std::string& text) { write_text_atomic(path, text); }

std::string csv_value(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, bool identity_line, AxisRange x_range,
                           AxisRange y_range) {
  const AxisRange xr = auto_range(series, true, x_range);
  const AxisRange yr = auto_range(series, false, y_range);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  auto px = [&](double x) { return x0 + (x - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
  auto py = [&](double y) { return y0 - (y - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

  std::ostringstream out;
  svg_open(out, title);
  axes(out, x_label, y_label, xr, yr, true);
  if (identity_line) {
    const double lo = std::max(xr.lo, yr.lo), hi = std::min(xr.hi, yr.hi);
    out << "<polyline fill=\"none\" stroke=\"#999999\" stroke-dasharray=\"4 3\" points=\"" << px(lo) << ','
        << py(lo) << ' ' << px(hi) << ',' << py(hi) << "\"/>\n";
  }
  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      if (!std::isfinite(series[s].y[i])) continue;
      out << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    }
    out << "\"/>\n";
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      if (!std::isfinite(series[s].y[i])) continue;
      out << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\"" << py(series[s].y[i])
          << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(s);
    out << "<line x1=\"" << x1 + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << x1 + 32 << "\" y2=\"" << ly - 4
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << x1 + 36 << "\" y=\"" << ly << "\">" << escape(series[s].label) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& labels, const std::vector<double>& values) {
  double hi = 0.0;
  for (double v : values)
    if (std::isfinite(v)) hi = std::max(hi, v);
  const AxisRange yr{0.0, hi > 0.0 ? hi * 1.1 : 1.0, true};
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::ostringstream out;
  svg_open(out, title);
  axes(out, "", y_label, {}, yr, false);
  const double slot = (x1 - x0) / static_cast<double>(std::max<size_t>(values.size(), 1));
  for (size_t i = 0; i < values.size(); ++i) {
    const double v = std::isfinite(values[i]) ? values[i] : 0.0;
    const double h = v / yr.hi * (y0 - y1);
    const double bx = x0 + slot * static_cast<double>(i) + slot * 0.15;
    out << "<rect x=\"" << bx << "\" y=\"" << y0 - h << "\" width=\"" << slot * 0.7 << "\" height=\"" << h
        << "\" fill=\"" << kPalette[i % std::size(kPalette)] << "\"/>\n";
    out << "<text x=\"" << bx + slot * 0.35 << "\" y=\"" << y0 - h - 4 << "\" text-anchor=\"middle\">"
        << num(values[i]) << "</text>\n";
    out << "<text x=\"" << bx + slot * 0.35 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
        << escape(labels[i]) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

Json to_json(const ClassScore& s) {
  auto v = [](double x) { return std::isnan(x) ? Json(nullptr) : Json(x); };
  return Json{{"ER", v(s.er)},          {"F1", v(s.f1)},           {"DEL", v(s.del)},
              {"INS", v(s.ins)},        {"Ntp", s.counts.tp},      {"Nfp", s.counts.fp},
              {"Nfn", s.counts.fn},     {"Nref", s.counts.nref}};
}

Json to_json(const ReliabilityBin& b) {
  auto v = [](double x) { return std::isnan(x) ? Json(nullptr) : Json(x); };
  return Json{{"lower", b.lower}, {"upper", b.upper}, {"mean_value", v(b.mean_value)},
              {"accuracy", v(b.accuracy)}, {"count", b.count}};
}

namespace {

Json block_json(const ScoreBlock& b) {
  Json per = Json::array();
  for (const auto& s : b.per_class) per.push_back(to_json(s));
  return Json{{"macro", to_json(b.macro)}, {"scored_classes", b.scored_classes}, {"per_class", per}};
}

Json bins_json(const std::vector<ReliabilityBin>& bins) {
  Json out = Json::array();
  for (const auto& b : bins) out.push_back(to_json(b));
  return out;
}

}  // namespace

Json to_json(const Evaluation& e) {
  Json j{{"event", block_json(e.scores.event)}};
  if (e.scores.segment) j["segment"] = block_json(*e.scores.segment);
  j["reliability"] = Json{{"by_confidence", bins_json(e.reliability.by_confidence)},
                          {"positive_by_confidence", bins_json(e.reliability.positive_by_confidence)},
                          {"positive_by_posterior", bins_json(e.reliability.positive_by_posterior)}};
  return j;
}

std::vector<ReliabilityBin> reliability_bins_from_json(const Json& j) {
  std::vector<ReliabilityBin> out;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& b : j) {
    ReliabilityBin bin;
    bin.lower = b.at("lower").get<double>();
    bin.upper = b.at("upper").get<double>();
    bin.mean_value = b.at("mean_value").is_null() ? nan : b.at("mean_value").get<double>();
    bin.accuracy = b.at("accuracy").is_null() ? nan : b.at("accuracy").get<double>();
    bin.count = b.at("count").get<size_t>();
    out.push_back(bin);
  }
  return out;
}

void write_n_curve_report(const fs::path& dir, const std::vector<std::pair<std::string, StageReport>>& runs) {
  if (runs.empty()) throw DataError("report: no runs given");
  fs::create_directories(dir);
  std::vector<Series> series;
  std::ostringstream csv;
  csv << std::setprecision(17) << "run,phase,epoch,index,n\n";
  for (const auto& [name, report] : runs) {
    if (report.epochs.empty()) throw DataError("report: run " + name + " has no epochs");
    const size_t width = report.epochs.front().n.size();
    for (size_t k = 0; k < width; ++k) {
      Series s;
      s.label = width == 1 ? name : name + " n" + std::to_string(k);
      for (size_t e = 0; e < report.epochs.size(); ++e) {
        const EpochRecord& rec = report.epochs[e];
        // Epoch axis counts from 1 across phases.
        s.x.push_back(static_cast<double>(e + 1));
        s.y.push_back(rec.n.at(k));
        csv << name << ',' << rec.phase << ',' << e + 1 << ',' << k << ',' << rec.n[k] << '\n';
      }
      series.push_back(std::move(s));
    }
  }
  write_file(dir / "n_curves.csv", csv.str());
  write_file(dir / "n_curves.svg", line_chart_svg("Power pooling exponent n by epoch", "epoch", "n", series));
}

void write_reliability_report(const fs::path& dir, const std::string& prefix,
                              const ReliabilityReport& reliability) {
  fs::create_directories(dir);
  auto emit = [&](const std::string& suffix, const std::string& title, const std::string& x_label,
                  const std::vector<ReliabilityBin>& bins) {
    std::ostringstream csv;
    csv << "lower,upper,mean_value,accuracy,count\n";
    Series s{suffix, {}, {}};
    for (const auto& b : bins) {
      csv << csv_value(b.lower) << ',' << csv_value(b.upper) << ',' << csv_value(b.mean_value) << ','
          << csv_value(b.accuracy) << ',' << b.count << '\n';
      if (b.count > 0) {
        s.x.push_back(b.mean_value);
        s.y.push_back(b.accuracy);
      }
    }
    write_file(dir / (prefix + "_" + suffix + ".csv"), csv.str());
    write_file(dir / (prefix + "_" + suffix + ".svg"),
               line_chart_svg(title, x_label, "frame accuracy", {s}, true, {0.0, 1.0, true}, {0.0, 1.0, true}));
  };
  emit("confidence", "Accuracy against confidence", "mean confidence", reliability.by_confidence);
  emit("posterior", "Accuracy of positive predictions against posterior", "mean posterior",
       reliability.positive_by_posterior);
}

void write_comparison_report(const fs::path& dir, const std::vector<ComparisonRow>& rows) {
  if (rows.empty()) throw DataError("report: no evaluated runs to compare");
  fs::create_directories(dir);
  std::ostringstream csv;
  csv << "method,run,ER,F1,DEL,INS\n";
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& r : rows) {
    csv << r.method << ',' << r.run << ',' << csv_value(r.event.er) << ',' << csv_value(r.event.f1) << ','
        << csv_value(r.event.del) << ',' << csv_value(r.event.ins) << '\n';
    labels.push_back(r.method);
    values.push_back(r.event.er);
  }
  write_file(dir / "er_comparison.csv", csv.str());
  write_file(dir / "er_comparison.svg", bar_chart_svg("Event-based macro ER", "ER", labels, values));
}

}  // namespace milpool
