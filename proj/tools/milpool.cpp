// tools/milpool.cpp

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

// milpool command-line front end.
//
//   milpool gen-data --out DIR [--seed N] [--force]
//   milpool train --data DIR --out DIR --stage 1|2 [--stage1-dir DIR] ...
//   milpool evaluate --data DIR (--run DIR | --checkpoint FILE) [--segment]
//   milpool report --run [NAME=]DIR ... --out DIR
//   milpool check
//
// Every subcommand accepts --config FILE: a flat "key = value" file whose
// keys are long option names. Flags given on the command line win.
//
// Exit codes: 0 success, 1 usage error, 2 data or config error,
// 3 numerical failure.

#include <zlib.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "milpool/pipeline.hpp"
#include "milpool/report.hpp"
#include "milpool/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace milpool;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Expands "--config FILE" into "--key=value" tokens placed right after the
// subcommand name, so later command-line flags override them.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::vector<std::string> out;
  std::vector<std::string> from_file;
  for (size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
      continue;
    }
    std::ifstream in(path);
    if (!in) throw DataError("cannot read config file " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line.substr(0, line.find('#')));
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw DataError(path + ":" + std::to_string(lineno) + ": empty key");
      from_file.push_back("--" + key + "=" + value);
    }
  }
  if (out.size() < 2) return out;
  out.insert(out.begin() + 2, from_file.begin(), from_file.end());
  return out;
}

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

uint32_t file_crc(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

// ---------------------------------------------------------------- gen-data

struct GenOptions {
  std::string out;
  bool force = false;
  DatasetSpec spec = DatasetSpec::defaults();
};

int run_gen_data(const GenOptions& o) {
  Dataset d = generate_to_disk(o.spec, o.out, o.force);
  std::cout << "dataset written to " << o.out << "\n";
  for (Split s : {Split::Strong, Split::Weak, Split::Unlabeled, Split::Validation})
    std::cout << "  " << std::setw(12) << std::left << to_string(s) << d.split(s).size() << " clips\n";
  std::cout << "  classes " << d.spec.num_classes << ", frames " << d.spec.frames_per_clip << ", features "
            << d.spec.feature_dim << ", seed " << d.spec.seed << "\n";
  std::cout << "  features.bin crc32 " << std::hex << std::setw(8) << std::setfill('0')
            << file_crc(fs::path(o.out) / "features.bin") << "\n  manifest.json crc32 " << std::setw(8)
            << file_crc(fs::path(o.out) / "manifest.json") << std::dec << std::setfill(' ') << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainOptions {
  std::string data;
  std::string out;
  int stage = 1;
  std::string stage1_dir;
  std::string pooling = "power";
  std::string n_sharing = "shared";
  std::string mode = "none";
  std::vector<size_t> hidden{32};
  bool no_consistency = false;
  bool cold_start = false;
  size_t stop_after = 0;
  TrainConfig config;
};

int run_train(TrainOptions o) {
  TrainConfig& c = o.config;
  c.model.pooling = parse_pool_kind(o.pooling);
  c.model.n_sharing = parse_sharing(o.n_sharing);
  c.model.hidden_dims = o.hidden;
  c.model.seed = c.seed;
  c.stage2_consistency = !o.no_consistency;
  c.stage2_warm_start = !o.cold_start;
  if (o.stop_after > 0) c.stop_after_epochs = o.stop_after;
  if (o.stage != 1 && o.stage != 2) throw UsageError("--stage must be 1 or 2");
  if (o.stage == 1 && o.mode != "none") throw UsageError("--mode applies to stage 2 only");
  if (o.stage == 1 && !o.stage1_dir.empty()) throw UsageError("--stage1-dir applies to stage 2 only");
  if (o.stage == 2 && o.stage1_dir.empty()) throw UsageError("stage 2 needs --stage1-dir");

  const Dataset dataset = load_dataset(o.data);
  c.model.input_dim = dataset.spec.feature_dim;
  c.model.num_classes = dataset.spec.num_classes;
  const auto clips = dataset.training_clips();
  fs::create_directories(o.out);

  StageResult result;
  if (o.stage == 1) {
    c.validate();
    std::cout << "stage 1: " << clips.size() << " training clips, pooling " << to_string(c.model.pooling)
              << ", n init " << c.model.n_init << "\n";
    result = train_stage1(clips, c, fs::path(o.out));
  } else {
    c.weighting = parse_weighting(o.mode == "none" ? "confidence" : o.mode);
    const fs::path s1(o.stage1_dir);
    if (!fs::exists(s1 / "teacher.ckpt") || !fs::exists(s1 / "student.ckpt"))
      throw DataError("stage 2: no stage-1 checkpoints in " + s1.string());
    ModelCheckpoint teacher = load_model(s1 / "teacher.ckpt");
    ModelCheckpoint student = load_model(s1 / "student.ckpt");
    if (teacher.config.input_dim != dataset.spec.feature_dim || teacher.config.num_classes != dataset.spec.num_classes)
      throw DataError("stage 2: stage-1 model does not match the dataset");
    c.model = teacher.config;
    c.validate();
    const size_t threads = c.threads;
    PseudoLabelSet pseudo = generate_pseudo_labels(teacher.params, clips, threads);
    std::cout << "stage 2: " << clips.size() << " clips, weighting " << to_string(c.weighting) << ", alpha "
              << c.loss.alpha << (c.stage2_warm_start ? ", warm start" : ", cold start") << "\n";
    result = train_stage2(clips, pseudo, student.params, c, fs::path(o.out));
    std::cout << "discarded frames: " << result.report.discarded_frames << "\n";
    if (result.report.confidence_free) std::cout << "run is confidence-free\n";
  }
  for (const auto& e : result.report.epochs) {
    std::cout << "  epoch " << std::setw(3) << e.epoch << " " << std::setw(14) << std::left << e.phase
              << std::right << " loss " << fixed(e.total, 5) << "  n";
    for (double v : e.n) std::cout << " " << fixed(v, 4);
    std::cout << "\n";
  }
  std::cout << (result.completed ? "finished" : "stopped early; rerun the same command to resume") << " ("
            << fixed(result.report.wall_clock_sec, 1) << " s)\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvalOptions {
  std::string data;
  std::string run;
  std::string checkpoint;
  std::string split = "validation";
  std::string out;
  bool segment = false;
  bool use_student = false;
  bool reference = false;
  double threshold = 0.5;
  double window_ratio = kDefaultWindowRatio;
  size_t threads = 1;
};

// Row label for comparison tables, from the run's saved training config.
std::string method_label(const Json& header, const fs::path& run_dir) {
  const std::string stage = header.value("stage", std::string("stage1"));
  std::string pooling = header.contains("pooling") && header["pooling"].contains("kind")
                            ? header["pooling"]["kind"].get<std::string>()
                            : "";
  if (stage == "stage1") {
    if (fs::exists(run_dir / "config.json")) {
      std::ifstream in(run_dir / "config.json");
      const Json cfg = Json::parse(in);
      pooling = cfg.at("model").value("pooling", pooling);
    }
    return pooling == "power" || pooling.empty() ? "MT-SSED" : "MT-SSED (" + pooling + ")";
  }
  std::string label = "C-SSED";
  if (fs::exists(run_dir / "config.json")) {
    std::ifstream in(run_dir / "config.json");
    const Json cfg = Json::parse(in);
    const std::string w = cfg.at("weighting").get<std::string>();
    const double alpha = cfg.at("alpha").get<double>();
    std::ostringstream a;
    a << alpha;
    if (w == "confidence") label = alpha == 0.0 ? "Retrain (alpha=0)" : "C-SSED (alpha=" + a.str() + ")";
    if (w == "unweighted") label = "Retrain (unweighted)";
    if (w == "prob09") label = "Prob0.9";
    if (w == "prob_weighted") label = "Prob";
    if (w == "prob05") label = "Prob0.5";
  }
  return label;
}

void print_block(const std::string& title, const ScoreBlock& b) {
  std::cout << title << "\n";
  std::cout << "  class      ER      F1     DEL     INS   Nref\n";
  for (size_t k = 0; k < b.per_class.size(); ++k) {
    const ClassScore& s = b.per_class[k];
    std::cout << "  " << std::setw(5) << k << " " << std::setw(7) << fixed(s.er, 3) << " " << std::setw(7)
              << fixed(s.f1, 3) << " " << std::setw(7) << fixed(s.del, 3) << " " << std::setw(7)
              << fixed(s.ins, 3) << " " << std::setw(6) << s.counts.nref << "\n";
  }
  std::cout << "  macro " << std::setw(7) << fixed(b.macro.er, 3) << " " << std::setw(7) << fixed(b.macro.f1, 3)
            << " " << std::setw(7) << fixed(b.macro.del, 3) << " " << std::setw(7) << fixed(b.macro.ins, 3)
            << "   (over " << b.scored_classes << " classes with events)\n";
}

void write_csv(const fs::path& path, const ScoreBlock& b) {
  std::ostringstream out;
  out << std::setprecision(12);
  write_score_csv(out, b);
  write_text_atomic(path, out.str());
}

int run_evaluate(const EvalOptions& o) {
  if (o.run.empty() == o.checkpoint.empty()) throw UsageError("give exactly one of --run or --checkpoint");
  if (o.use_student && o.run.empty()) throw UsageError("--use-student needs --run");
  const Dataset dataset = load_dataset(o.data);
  const Split split = parse_split(o.split);
  DecodeConfig decode = default_decode_config(dataset, o.window_ratio);
  decode.threshold = o.threshold;

  const fs::path ckpt = o.run.empty() ? fs::path(o.checkpoint)
                                      : fs::path(o.run) / (o.use_student ? "student.ckpt" : "teacher.ckpt");
  const fs::path run_dir = o.run.empty() ? ckpt.parent_path() : fs::path(o.run);
  const fs::path out_dir = o.out.empty() ? run_dir : fs::path(o.out);
  fs::create_directories(out_dir);

  if (o.reference) {
    ScoreReport r = evaluate_reference(dataset, split);
    print_block("event-based (decoded ground truth)", r.event);
    write_csv(out_dir / "reference_event.csv", r.event);
    if (o.segment) {
      print_block("segment-based (decoded ground truth)", *r.segment);
      write_csv(out_dir / "reference_segment.csv", *r.segment);
    }
    return 0;
  }

  if (!fs::exists(ckpt)) throw DataError("missing checkpoint " + ckpt.string());
  ModelCheckpoint model = load_model(ckpt);
  if (model.config.input_dim != dataset.spec.feature_dim || model.config.num_classes != dataset.spec.num_classes)
    throw DataError("checkpoint does not match the dataset");
  Evaluation ev = evaluate(model.params, dataset, split, decode, o.segment, o.threads);
  print_block("event-based", ev.scores.event);
  write_csv(out_dir / "scores_event.csv", ev.scores.event);
  if (ev.scores.segment) {
    print_block("segment-based (1 s)", *ev.scores.segment);
    write_csv(out_dir / "scores_segment.csv", *ev.scores.segment);
  }
  Json j = to_json(ev);
  j["method"] = method_label(model.header, run_dir);
  j["checkpoint"] = ckpt.filename().string();
  j["split"] = o.split;
  write_text_atomic(out_dir / "evaluation.json", j.dump(1) + "\n");
  std::ostringstream rel;
  write_reliability_csv(rel, ev.reliability.by_confidence);
  write_text_atomic(out_dir / "reliability.csv", rel.str());
  return 0;
}

// ------------------------------------------------------------------ report

struct ReportOptions {
  std::vector<std::string> runs;
  std::string out;
};

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("cannot parse " + path.string() + ": " + e.what());
  }
}

int run_report(const ReportOptions& o) {
  std::vector<std::pair<std::string, StageReport>> curves;
  std::vector<ComparisonRow> rows;
  const fs::path out(o.out);
  for (const std::string& arg : o.runs) {
    const auto eq = arg.find('=');
    const fs::path dir = eq == std::string::npos ? fs::path(arg) : fs::path(arg.substr(eq + 1));
    std::string name = eq == std::string::npos ? dir.filename().string() : arg.substr(0, eq);
    if (name.empty()) name = dir.parent_path().filename().string();
    const fs::path report_path = dir / "report.json";
    if (!fs::exists(report_path)) throw DataError("missing report: " + report_path.string());
    StageReport report = stage_report_from_json(read_json(report_path));
    if (!report.n_trajectory("classification").empty()) curves.emplace_back(name, report);
    if (fs::exists(dir / "evaluation.json")) {
      const Json ev = read_json(dir / "evaluation.json");
      const Json& m = ev.at("event").at("macro");
      auto val = [&](const char* k) {
        return m.at(k).is_null() ? std::nan("") : m.at(k).get<double>();
      };
      ComparisonRow row;
      row.method = ev.value("method", name);
      row.run = name;
      row.event.er = val("ER");
      row.event.f1 = val("F1");
      row.event.del = val("DEL");
      row.event.ins = val("INS");
      rows.push_back(row);
      const Json& rel = ev.at("reliability");
      ReliabilityReport r;
      r.by_confidence = reliability_bins_from_json(rel.at("by_confidence"));
      r.positive_by_confidence = reliability_bins_from_json(rel.at("positive_by_confidence"));
      r.positive_by_posterior = reliability_bins_from_json(rel.at("positive_by_posterior"));
      write_reliability_report(out, "reliability_" + name, r);
      std::cout << "reliability curves for " << name << "\n";
    }
  }
  if (!curves.empty()) {
    write_n_curve_report(out, curves);
    std::cout << "n curves for " << curves.size() << " run(s)\n";
  }
  if (!rows.empty()) {
    write_comparison_report(out, rows);
    std::cout << "method                     ER      F1     DEL     INS\n";
    for (const auto& r : rows)
      std::cout << std::setw(24) << std::left << r.method << std::right << " " << std::setw(6) << fixed(r.event.er, 3)
                << " " << std::setw(7) << fixed(r.event.f1, 3) << " " << std::setw(7) << fixed(r.event.del, 3)
                << " " << std::setw(7) << fixed(r.event.ins, 3) << "\n";
  }
  if (curves.empty() && rows.empty()) throw DataError("report: nothing to plot in the given runs");
  std::cout << "written to " << o.out << "\n";
  return 0;
}

// ------------------------------------------------------------------- check

int run_check(uint64_t seed) {
  bool ok = true;
  for (const CheckResult& r : run_self_checks(seed)) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.pass;
  }
  return ok ? 0 : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power-pooling sound event detection with confidence-weighted retraining"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  const size_t env_threads = threads_from_env();

  GenOptions gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_flag("--force", gen.force, "Overwrite an existing dataset");
  g->add_option("--seed", gen.spec.seed, "Generator seed");
  g->add_option("--strong", gen.spec.strong_count, "Strongly labelled clips");
  g->add_option("--weak", gen.spec.weak_count, "Weakly labelled clips");
  g->add_option("--unlabeled", gen.spec.unlabeled_count, "Unlabelled clips");
  g->add_option("--validation", gen.spec.validation_count, "Validation clips");
  g->add_option("--frames", gen.spec.frames_per_clip, "Frames per clip");
  g->add_option("--noise-floor", gen.spec.noise_floor, "Background noise std");
  g->add_option("--signature-norm", gen.spec.signature_norm, "Class signature norm");

  TrainOptions tr;
  tr.config.threads = env_threads;
  auto* t = app.add_subcommand("train", "Run stage 1 or stage 2 training");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--stage", tr.stage, "1 or 2")->required();
  t->add_option("--stage1-dir", tr.stage1_dir, "Stage-1 run directory (stage 2)");
  t->add_option("--pooling", tr.pooling, "power, linear, auto, attention, mean, max");
  t->add_option("--n-init", tr.config.model.n_init, "Initial power-pooling exponent");
  t->add_option("--beta-init", tr.config.model.beta_init, "Initial auto-pooling beta");
  t->add_option("--n-sharing", tr.n_sharing, "shared or per-class");
  t->add_flag("--allow-negative-n", tr.config.model.allow_negative_n, "Widen the n clamp to (-1, 20]");
  t->add_option("--hidden", tr.hidden, "Hidden layer widths")->delimiter(',');
  t->add_option("--context", tr.config.model.context_radius, "Context radius in frames");
  t->add_option("--lambda", tr.config.loss.lambda, "Confidence penalty weight");
  t->add_option("--alpha", tr.config.loss.alpha, "Confidence interpolation for stage 2");
  t->add_option("--mu-max", tr.config.loss.mu_max, "Consistency weight after ramp-up");
  t->add_option("--ramp", tr.config.loss.ramp_epochs, "Consistency ramp-up epochs");
  t->add_option("--epochs-a", tr.config.classification_epochs, "Classification-phase epochs");
  t->add_option("--epochs-b", tr.config.confidence_epochs, "Confidence-phase epochs");
  t->add_option("--epochs-2", tr.config.stage2_epochs, "Stage-2 epochs");
  t->add_option("--decay", tr.config.ema_decay, "Teacher EMA decay");
  t->add_option("--batch", tr.config.batch_size, "Clips per step");
  t->add_option("--lr", tr.config.adam.lr, "Adam learning rate");
  t->add_option("--pooling-lr", tr.config.adam.pooling_lr, "Adam learning rate for pooling parameters");
  t->add_option("--shift-std", tr.config.noise.shift_std_frames, "Time-shift std in frames");
  t->add_option("--noise-std", tr.config.noise.gaussian_std, "Gaussian feature noise std");
  t->add_option("--seed", tr.config.seed, "Training seed");
  t->add_option("--mode", tr.mode, "Stage-2 weighting: none, unweighted, prob09, prob_weighted, prob05");
  t->add_flag("--no-consistency", tr.no_consistency, "Drop the stage-2 consistency term");
  t->add_flag("--cold-start", tr.cold_start, "Stage 2 from fresh weights");
  t->add_option("--stop-after", tr.stop_after, "Stop after this many epochs (resumable)");
  t->add_option("--threads", tr.config.threads, "Worker threads");

  EvalOptions ev;
  ev.threads = env_threads;
  auto* e = app.add_subcommand("evaluate", "Score a checkpoint on a split");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--run", ev.run, "Run directory (uses teacher.ckpt)");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  e->add_option("--split", ev.split, "strong, weak, unlabeled, validation");
  e->add_option("--out", ev.out, "Output directory (default: the run directory)");
  e->add_flag("--segment", ev.segment, "Add segment-based scores");
  e->add_flag("--use-student", ev.use_student, "Evaluate student.ckpt instead of teacher.ckpt");
  e->add_flag("--reference", ev.reference, "Score decoded ground truth instead of a model");
  e->add_option("--threshold", ev.threshold, "Frame decision threshold");
  e->add_option("--window-ratio", ev.window_ratio, "Median window as a fraction of mean event duration");
  e->add_option("--threads", ev.threads, "Worker threads");

  ReportOptions rep;
  auto* r = app.add_subcommand("report", "Plots and tables from run directories");
  r->add_option("--run", rep.runs, "Run directory, optionally NAME=DIR")->required()->multi_option_policy(
      CLI::MultiOptionPolicy::TakeAll);
  r->add_option("--out", rep.out, "Output directory")->required();

  uint64_t check_seed = 2024;
  auto* ch = app.add_subcommand("check", "Gradient and property self-tests");
  ch->add_option("--seed", check_seed, "Seed for random test inputs");

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    args.pop_back();  // program name
    app.parse(args);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  } catch (const DataError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitData;
  }

  try {
    if (*g) return run_gen_data(gen);
    if (*t) return run_train(tr);
    if (*e) return run_evaluate(ev);
    if (*r) return run_report(rep);
    if (*ch) return run_check(check_seed);
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& ex) {
    std::cerr << "numerical failure: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
