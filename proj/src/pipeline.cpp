// src/pipeline.cpp

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

#include "milpool/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <thread>

namespace milpool {

namespace fs = std::filesystem;

std::string to_string(Stage2Weighting w) {
  switch (w) {
    case Stage2Weighting::Confidence: return "confidence";
    case Stage2Weighting::Unweighted: return "unweighted";
    case Stage2Weighting::Prob09: return "prob09";
    case Stage2Weighting::ProbWeighted: return "prob_weighted";
    case Stage2Weighting::Prob05: return "prob05";
  }
  return "unknown";
}

Stage2Weighting parse_weighting(const std::string& name) {
  for (auto w : {Stage2Weighting::Confidence, Stage2Weighting::Unweighted, Stage2Weighting::Prob09,
                 Stage2Weighting::ProbWeighted, Stage2Weighting::Prob05})
    if (to_string(w) == name) return w;
  if (name == "none") return Stage2Weighting::Confidence;
  throw DataError("unknown stage-two weighting: " + name);
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::StrongGroundTruth: return "strong-groundtruth";
    case Provenance::WeakRevised: return "weak-revised";
    case Provenance::UnlabeledRaw: return "unlabeled-raw";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  noise.validate();
  if (ema_decay < 0.0 || ema_decay >= 1.0) throw DataError("ema decay must lie in [0, 1)");
  if (batch_size == 0) throw DataError("batch size must be >= 1");
  if (!(adam.lr > 0.0) || !(adam.pooling_lr > 0.0)) throw DataError("learning rates must be > 0");
}

Json to_json(const TrainConfig& c) {
  return Json{{"model", to_json(c.model)},
              {"lr", c.adam.lr},
              {"pooling_lr", c.adam.pooling_lr},
              {"adam_beta1", c.adam.beta1},
              {"adam_beta2", c.adam.beta2},
              {"adam_eps", c.adam.eps},
              {"lambda", c.loss.lambda},
              {"mu_max", c.loss.mu_max},
              {"ramp_epochs", c.loss.ramp_epochs},
              {"alpha", c.loss.alpha},
              {"shift_std_frames", c.noise.shift_std_frames},
              {"gaussian_std", c.noise.gaussian_std},
              {"ema_decay", c.ema_decay},
              {"classification_epochs", c.classification_epochs},
              {"confidence_epochs", c.confidence_epochs},
              {"stage2_epochs", c.stage2_epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"weighting", to_string(c.weighting)},
              {"stage2_consistency", c.stage2_consistency},
              {"stage2_warm_start", c.stage2_warm_start}};
}

TrainConfig train_config_from_json(const Json& j) {
  try {
    TrainConfig c;
    c.model = model_config_from_json(j.at("model"));
    c.adam.lr = j.at("lr").get<double>();
    c.adam.pooling_lr = j.at("pooling_lr").get<double>();
    c.adam.beta1 = j.at("adam_beta1").get<double>();
    c.adam.beta2 = j.at("adam_beta2").get<double>();
    c.adam.eps = j.at("adam_eps").get<double>();
    c.loss.lambda = j.at("lambda").get<double>();
    c.loss.mu_max = j.at("mu_max").get<double>();
    c.loss.ramp_epochs = j.at("ramp_epochs").get<size_t>();
    c.loss.alpha = j.at("alpha").get<double>();
    c.noise.shift_std_frames = j.at("shift_std_frames").get<double>();
    c.noise.gaussian_std = j.at("gaussian_std").get<double>();
    c.ema_decay = j.at("ema_decay").get<double>();
    c.classification_epochs = j.at("classification_epochs").get<size_t>();
    c.confidence_epochs = j.at("confidence_epochs").get<size_t>();
    c.stage2_epochs = j.at("stage2_epochs").get<size_t>();
    c.batch_size = j.at("batch_size").get<size_t>();
    c.seed = j.at("seed").get<uint64_t>();
    c.weighting = parse_weighting(j.at("weighting").get<std::string>());
    c.stage2_consistency = j.at("stage2_consistency").get<bool>();
    c.stage2_warm_start = j.at("stage2_warm_start").get<bool>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad training config: ") + e.what());
  }
}

std::vector<std::vector<double>> StageReport::n_trajectory(const std::string& phase) const {
  std::vector<std::vector<double>> out;
  for (const auto& e : epochs)
    if (e.phase == phase) out.push_back(e.n);
  return out;
}

Json to_json(const StageReport& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs)
    epochs.push_back(Json{{"epoch", e.epoch},
                          {"phase", e.phase},
                          {"class_loss", e.class_loss},
                          {"consistency", e.consistency},
                          {"confidence", e.confidence},
                          {"total", e.total},
                          {"n", e.n}});
  return Json{{"epochs", epochs},
              {"step_losses", r.step_losses},
              {"checkpoint", r.checkpoint},
              {"discarded_frames", r.discarded_frames},
              {"confidence_free", r.confidence_free}};
}

StageReport stage_report_from_json(const Json& j) {
  StageReport r;
  for (const auto& e : j.at("epochs"))
    r.epochs.push_back({e.at("epoch").get<size_t>(), e.at("phase").get<std::string>(),
                        e.at("class_loss").get<double>(), e.at("consistency").get<double>(),
                        e.at("confidence").get<double>(), e.at("total").get<double>(),
                        e.at("n").get<std::vector<double>>()});
  r.step_losses = j.at("step_losses").get<std::vector<double>>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.discarded_frames = j.at("discarded_frames").get<size_t>();
  r.confidence_free = j.at("confidence_free").get<bool>();
  return r;
}

void parallel_for(size_t count, size_t threads, const std::function<void(size_t)>& fn) {
  const size_t workers = std::max<size_t>(1, std::min(threads, count));
  if (workers == 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

size_t threads_from_env() {
  const char* v = std::getenv("MILPOOL_THREADS");
  if (v == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || n < 1) return 1;
  return static_cast<size_t>(n);
}

namespace {

enum StageTag : uint64_t { kClassificationTag = 1, kConfidenceTag = 2, kRetrainTag = 3 };
enum NoiseStream : uint64_t { kShiftStream = 0, kStudentNoise = 1, kTeacherNoise = 2, kShuffleStream = 3 };

constexpr const char* kPhaseClassification = "classification";
constexpr const char* kPhaseConfidence = "confidence";
constexpr const char* kPhaseRetrain = "retrain";

struct BatchInfo {
  size_t size = 0;
  double weight_sum = 0.0;
};

struct ClipOutcome {
  double class_loss = 0.0;
  double consistency = 0.0;
  double confidence = 0.0;
  double total = 0.0;
  LossGrads grads;
  bool needs_backward = true;
};

using ClipLossFn = std::function<ClipOutcome(size_t clip, int shift, const PredictionBundle& student,
                                             const PredictionBundle& teacher, const BatchInfo& batch)>;
using BatchInfoFn = std::function<BatchInfo(const std::vector<size_t>& batch)>;

struct EpochPlan {
  uint64_t tag = 0;
  size_t epoch = 0;  // index used for noise and shuffling
  TrainableGroups groups;
  std::vector<ParamGroup> synced;
  bool teacher_frozen = false;  // only the synced groups follow the student
};

std::vector<size_t> shuffled_order(size_t count, uint64_t seed, uint64_t tag, size_t epoch) {
  std::vector<size_t> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng = Rng::substream(seed, {tag, epoch, kShuffleStream});
  for (size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

EpochRecord run_epoch(const std::vector<const FeatureClip*>& clips, const TrainConfig& config,
                      const EpochPlan& plan, ModelParams& student, TeacherState& teacher, AdamState& adam,
                      const ClipLossFn& loss_fn, const BatchInfoFn& batch_info,
                      std::vector<double>& step_losses) {
  const auto order = shuffled_order(clips.size(), config.seed, plan.tag, plan.epoch);
  EpochRecord rec;
  rec.epoch = plan.epoch;
  size_t steps = 0;
  for (size_t start = 0; start < order.size(); start += config.batch_size) {
    const size_t end = std::min(order.size(), start + config.batch_size);
    std::vector<size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
    const BatchInfo info = batch_info(batch);
    std::vector<ClipOutcome> outcomes(batch.size());
    std::vector<ModelParams> grads(batch.size());
    parallel_for(batch.size(), config.threads, [&](size_t b) {
      const size_t idx = batch[b];
      const Matrix& features = clips[idx]->features;
      Rng shift_rng = Rng::substream(config.seed, {plan.tag, plan.epoch, idx, kShiftStream});
      Rng student_rng = Rng::substream(config.seed, {plan.tag, plan.epoch, idx, kStudentNoise});
      Rng teacher_rng = Rng::substream(config.seed, {plan.tag, plan.epoch, idx, kTeacherNoise});
      const int shift = draw_shift(shift_rng, config.noise.shift_std_frames);
      const Matrix shifted = shift_frames(features, shift);
      const Matrix student_in = add_gaussian_noise(shifted, config.noise.gaussian_std, student_rng);
      const Matrix teacher_in = add_gaussian_noise(shifted, config.noise.gaussian_std, teacher_rng);
      PredictionBundle sb = forward(student_in, student);
      PredictionBundle tb = forward(teacher_in, teacher.params);
      outcomes[b] = loss_fn(idx, shift, sb, tb, info);
      if (outcomes[b].needs_backward) {
        grads[b] = backward(student_in, student, sb, outcomes[b].grads);
      } else {
        grads[b] = zeros_like(student);
      }
    });

    ModelParams total = zeros_like(student);
    double step_loss = 0.0;
    for (size_t b = 0; b < batch.size(); ++b) {
      accumulate(total, grads[b]);
      rec.class_loss += outcomes[b].class_loss;
      rec.consistency += outcomes[b].consistency;
      rec.confidence += outcomes[b].confidence;
      step_loss += outcomes[b].total;
    }
    if (!std::isfinite(step_loss)) throw NumericalError("training loss became non-finite");
    mask_frozen(total, plan.groups);
    optimizer_step(student, total, adam, config.adam, plan.groups);
    if (plan.teacher_frozen) {
      sync_groups(teacher, student, plan.synced);
    } else {
      ema_update(teacher, student, plan.synced);
    }
    step_losses.push_back(step_loss);
    rec.total += step_loss;
    ++steps;
  }
  const double denom = static_cast<double>(std::max<size_t>(steps, 1));
  rec.class_loss /= denom;
  rec.consistency /= denom;
  rec.confidence /= denom;
  rec.total /= denom;
  rec.n = student.pooling.n;
  return rec;
}

std::vector<double> flatten_all(const ModelParams& p) {
  std::vector<double> out;
  for_each_block(p, false, [&](const std::string&, ParamGroup, auto block) {
    out.insert(out.end(), block.begin(), block.end());
  });
  return out;
}

void unflatten_all(ModelParams& p, std::span<const double> values, size_t& offset) {
  for_each_block(p, false, [&](const std::string&, ParamGroup, std::span<double> block) {
    if (offset + block.size() > values.size()) throw DataError("training state is truncated");
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), block.size(), block.begin());
    offset += block.size();
  });
}

Json resume_key(const TrainConfig& config, const std::string& stage) {
  Json key = to_json(config);
  key["stage"] = stage;
  return key;
}

struct TrainingState {
  ModelParams student;
  TeacherState teacher;
  AdamState adam;
  StageReport report;
  std::string phase;
  size_t epochs_done = 0;  // epochs completed in `phase`
};

void save_state(const fs::path& dir, const TrainConfig& config, const std::string& stage,
                const TrainingState& st) {
  Json header{{"role", "training-state"},
              {"stage", stage},
              {"phase", st.phase},
              {"epochs_done", st.epochs_done},
              {"adam_step", st.adam.step},
              {"adam_size", st.adam.m.size()},
              {"student_pooling", to_string(st.student.pooling.kind)},
              {"teacher_pooling", to_string(st.teacher.params.pooling.kind)},
              {"resume_key", resume_key(config, stage)},
              {"report", to_json(st.report)}};
  std::vector<double> blob = flatten_all(st.student);
  const auto t = flatten_all(st.teacher.params);
  blob.insert(blob.end(), t.begin(), t.end());
  blob.insert(blob.end(), st.adam.m.begin(), st.adam.m.end());
  blob.insert(blob.end(), st.adam.v.begin(), st.adam.v.end());
  write_blob_file(dir / "state.ckpt", header, blob);
}

std::optional<TrainingState> load_state(const fs::path& dir, const TrainConfig& config, const std::string& stage) {
  const fs::path path = dir / "state.ckpt";
  if (!fs::exists(path)) return std::nullopt;
  BlobFile file = read_blob_file(path);
  const Json& h = file.header;
  if (h.at("resume_key") != resume_key(config, stage))
    throw DataError("existing training state in " + dir.string() + " was produced by a different config");
  TrainingState st;
  st.phase = h.at("phase").get<std::string>();
  st.epochs_done = h.at("epochs_done").get<size_t>();
  st.report = stage_report_from_json(h.at("report"));
  st.student = init_params(config.model);
  st.student.pooling.kind = parse_pool_kind(h.at("student_pooling").get<std::string>());
  st.teacher.params = init_params(config.model);
  st.teacher.params.pooling.kind = parse_pool_kind(h.at("teacher_pooling").get<std::string>());
  st.teacher.decay = config.ema_decay;
  size_t offset = 0;
  unflatten_all(st.student, file.blob, offset);
  unflatten_all(st.teacher.params, file.blob, offset);
  const size_t adam_size = h.at("adam_size").get<size_t>();
  if (offset + 2 * adam_size != file.blob.size()) throw DataError("training state has the wrong size");
  st.adam.m.assign(file.blob.begin() + static_cast<std::ptrdiff_t>(offset),
                   file.blob.begin() + static_cast<std::ptrdiff_t>(offset + adam_size));
  st.adam.v.assign(file.blob.begin() + static_cast<std::ptrdiff_t>(offset + adam_size), file.blob.end());
  st.adam.step = h.at("adam_step").get<uint64_t>();
  return st;
}

std::string losses_csv(const StageReport& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "epoch,phase,class_loss,consistency,confidence,total\n";
  for (const auto& e : r.epochs)
    out << e.epoch << ',' << e.phase << ',' << e.class_loss << ',' << e.consistency << ',' << e.confidence << ','
        << e.total << '\n';
  return out.str();
}

std::string n_csv(const StageReport& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "epoch,phase";
  const size_t width = r.epochs.empty() ? 1 : r.epochs.front().n.size();
  for (size_t k = 0; k < width; ++k) out << ",n" << k;
  out << '\n';
  for (const auto& e : r.epochs) {
    out << e.epoch << ',' << e.phase;
    for (double v : e.n) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

void write_outputs(const fs::path& dir, const TrainConfig& config, const std::string& stage,
                   const TrainingState& st) {
  const size_t epoch = st.report.epochs.size();
  save_model(dir / "student.ckpt", st.student, config.model, "student", epoch,
             Json{{"stage", stage}, {"loss_curve", to_json(st.report).at("epochs")}});
  save_model(dir / "teacher.ckpt", st.teacher.params, config.model, "teacher", epoch,
             Json{{"stage", stage}, {"decay", st.teacher.decay}, {"loss_curve", to_json(st.report).at("epochs")}});
  write_text_atomic(dir / "report.json", to_json(st.report).dump(1) + "\n");
  write_text_atomic(dir / "losses.csv", losses_csv(st.report));
  write_text_atomic(dir / "n_trajectory.csv", n_csv(st.report));
  write_text_atomic(dir / "config.json", to_json(config).dump(1) + "\n");
  // State last: it is the commit point for resuming.
  save_state(dir, config, stage, st);
}

void write_timing(const fs::path& dir, double seconds) {
  write_text_atomic(dir / "timing.json", Json{{"wall_clock_sec", seconds}}.dump() + "\n");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

StageResult train_stage1(const std::vector<const FeatureClip*>& clips, const TrainConfig& config,
                         const std::optional<fs::path>& out_dir) {
  config.validate();
  if (clips.empty()) throw DataError("stage one: empty dataset");
  const bool any_strong = std::any_of(clips.begin(), clips.end(), [](const FeatureClip* c) {
    return c->targets.availability == Availability::Strong;
  });
  if (!any_strong) throw DataError("stage one: the confidence phase needs at least one strong clip");
  const auto t0 = std::chrono::steady_clock::now();

  TrainingState st;
  std::optional<TrainingState> resumed;
  if (out_dir) resumed = load_state(*out_dir, config, "stage1");
  if (resumed) {
    st = std::move(*resumed);
  } else {
    st.student = init_params(config.model);
    st.teacher = TeacherState{st.student, config.ema_decay};
    st.phase = kPhaseClassification;
  }

  const BatchInfoFn batch_info = [](const std::vector<size_t>& batch) {
    return BatchInfo{batch.size(), static_cast<double>(batch.size())};
  };
  auto make_loss = [&](Phase phase, size_t mu_epoch) -> ClipLossFn {
    return [&, phase, mu_epoch](size_t clip, int shift, const PredictionBundle& s, const PredictionBundle& t,
                                const BatchInfo& info) {
      const FrameTargets& raw = clips[clip]->targets;
      FrameTargets targets = raw;
      if (raw.availability == Availability::Strong) targets.frame = shift_frames(raw.frame, shift);
      Stage1Loss l = stage1_loss(s, t, targets, mu_epoch, config.loss, phase);
      const double scale = 1.0 / static_cast<double>(info.size);
      ClipOutcome out;
      out.class_loss = l.class_loss * scale;
      out.consistency = l.consistency * scale;
      out.confidence = l.confidence * scale;
      out.total = l.total * scale;
      out.grads = std::move(l.grads);
      out.grads.frame = map_values(out.grads.frame, [scale](double g) { return g * scale; });
      out.grads.confidence = map_values(out.grads.confidence, [scale](double g) { return g * scale; });
      for (double& g : out.grads.clip) g *= scale;
      // Only hinted (strong) clips reach the confidence head.
      out.needs_backward = phase == Phase::Classification || raw.availability == Availability::Strong;
      return out;
    };
  };

  size_t run_epochs = 0;
  auto budget_left = [&] { return !config.stop_after_epochs || run_epochs < *config.stop_after_epochs; };
  bool completed = true;

  if (st.phase == kPhaseClassification) {
    AdamState& adam = st.adam;
    while (st.epochs_done < config.classification_epochs) {
      if (!budget_left()) {
        completed = false;
        break;
      }
      EpochPlan plan{kClassificationTag, st.epochs_done, stage1_trainable(Phase::Classification), {}};
      EpochRecord rec = run_epoch(clips, config, plan, st.student, st.teacher, adam,
                                  make_loss(Phase::Classification, st.epochs_done), batch_info,
                                  st.report.step_losses);
      rec.phase = kPhaseClassification;
      st.report.epochs.push_back(rec);
      ++st.epochs_done;
      ++run_epochs;
      if (out_dir) write_outputs(*out_dir, config, "stage1", st);
    }
    if (completed) {
      st.phase = kPhaseConfidence;
      st.epochs_done = 0;
      st.adam = AdamState{};
    }
  }

  if (completed && st.phase == kPhaseConfidence) {
    // The trained teacher stays fixed; it only copies the new confidence head.
    const std::vector<ParamGroup> synced{ParamGroup::ConfidenceHead};
    while (st.epochs_done < config.confidence_epochs) {
      if (!budget_left()) {
        completed = false;
        break;
      }
      const size_t mu_epoch = config.classification_epochs + st.epochs_done;
      EpochPlan plan{kConfidenceTag, st.epochs_done, stage1_trainable(Phase::Confidence), synced, true};
      EpochRecord rec = run_epoch(clips, config, plan, st.student, st.teacher, st.adam,
                                  make_loss(Phase::Confidence, mu_epoch), batch_info, st.report.step_losses);
      rec.phase = kPhaseConfidence;
      rec.epoch = mu_epoch;
      st.report.epochs.push_back(rec);
      ++st.epochs_done;
      ++run_epochs;
      if (out_dir) write_outputs(*out_dir, config, "stage1", st);
    }
    if (completed) st.phase = "done";
  }

  if (out_dir) {
    st.report.checkpoint = "teacher.ckpt";
    write_outputs(*out_dir, config, "stage1", st);
  }
  st.report.wall_clock_sec = seconds_since(t0);
  if (out_dir) write_timing(*out_dir, st.report.wall_clock_sec);
  return StageResult{std::move(st.student), std::move(st.teacher), std::move(st.report), completed};
}

PseudoLabelSet generate_pseudo_labels(const ModelParams& teacher, const std::vector<const FeatureClip*>& clips,
                                      size_t threads) {
  PseudoLabelSet out;
  out.entries.resize(clips.size());
  parallel_for(clips.size(), threads, [&](size_t i) {
    const FeatureClip& clip = *clips[i];
    PseudoLabel& pl = out.entries[i];
    pl.clip_index = i;
    const size_t frames = clip.features.rows();
    const size_t classes = teacher.class_head.bias.size();
    pl.revised = Matrix(frames, classes, 0.0);
    if (clip.targets.availability == Availability::Strong) {
      pl.provenance = Provenance::StrongGroundTruth;
      pl.targets = clip.targets.frame;
      pl.confidence = Matrix(frames, classes, 1.0);
      pl.revised.fill(1.0);
      return;
    }
    PredictionBundle b = forward(clip.features, teacher);
    pl.targets = std::move(b.frame_probs);
    pl.confidence = std::move(b.confidence);
    if (clip.targets.availability == Availability::Weak) {
      pl.provenance = Provenance::WeakRevised;
      for (size_t k = 0; k < classes; ++k) {
        if (clip.targets.clip[k] != 0.0) continue;
        for (size_t t = 0; t < frames; ++t) {
          pl.targets(t, k) = 0.0;
          pl.confidence(t, k) = 1.0;
          pl.revised(t, k) = 1.0;
        }
      }
    } else {
      pl.provenance = Provenance::UnlabeledRaw;
    }
  });
  return out;
}

Stage2Plan build_stage2_targets(const PseudoLabelSet& pseudo, Stage2Weighting weighting, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw DataError("alpha must lie in [0, 1]");
  Stage2Plan plan;
  for (const PseudoLabel& pl : pseudo.entries) {
    Stage2Target t{pl.targets, Matrix(pl.targets.rows(), pl.targets.cols(), 1.0)};
    for (size_t i = 0; i < pl.targets.size(); ++i) {
      if (pl.revised.values()[i] != 0.0) continue;
      const double p = pl.targets.values()[i];
      const double c = pl.confidence.values()[i];
      double& target = t.targets.values()[i];
      double& weight = t.weights.values()[i];
      switch (weighting) {
        case Stage2Weighting::Confidence:
          weight = alpha * c + (1.0 - alpha);
          break;
        case Stage2Weighting::Unweighted:
          break;
        case Stage2Weighting::Prob09:
          if (p >= 0.9) {
            target = 1.0;
          } else {
            weight = 0.0;
            ++plan.discarded_frames;
          }
          break;
        case Stage2Weighting::ProbWeighted:
          weight = alpha * p + (1.0 - alpha);
          break;
        case Stage2Weighting::Prob05:
          if (p >= 0.5) {
            weight = alpha * c + (1.0 - alpha);
          } else {
            weight = 0.0;
            ++plan.discarded_frames;
          }
          break;
      }
    }
    plan.per_clip.push_back(std::move(t));
  }
  return plan;
}

StageResult train_stage2(const std::vector<const FeatureClip*>& clips, const PseudoLabelSet& pseudo,
                         const ModelParams& stage1_student, const TrainConfig& config,
                         const std::optional<fs::path>& out_dir) {
  config.validate();
  if (pseudo.entries.empty()) throw DataError("stage two: no pseudo-labels");
  if (pseudo.entries.size() != clips.size()) throw DataError("stage two: pseudo-labels do not match the clips");
  const auto t0 = std::chrono::steady_clock::now();

  const Stage2Plan plan = build_stage2_targets(pseudo, config.weighting, config.loss.alpha);
  std::vector<double> clip_weight(plan.per_clip.size(), 0.0);
  std::vector<double> clip_size(plan.per_clip.size(), 0.0);
  for (size_t i = 0; i < plan.per_clip.size(); ++i) {
    for (double w : plan.per_clip[i].weights.values()) clip_weight[i] += w;
    clip_size[i] = static_cast<double>(plan.per_clip[i].weights.size());
  }
  const bool unweighted = config.weighting == Stage2Weighting::Unweighted;

  TrainingState st;
  std::optional<TrainingState> resumed;
  if (out_dir) resumed = load_state(*out_dir, config, "stage2");
  if (resumed) {
    st = std::move(*resumed);
  } else {
    if (config.stage2_warm_start) {
      st.student = stage1_student;
    } else {
      ModelConfig fresh = config.model;
      fresh.seed = mix_seed(config.model.seed ^ kRetrainTag);
      st.student = init_params(fresh);
    }
    st.student.pooling.kind = PoolKind::Max;
    st.teacher = TeacherState{st.student, config.ema_decay};
    st.phase = kPhaseRetrain;
    st.report.discarded_frames = plan.discarded_frames;
    st.report.confidence_free =
        unweighted || (config.weighting == Stage2Weighting::Confidence && config.loss.alpha == 0.0);
  }

  const BatchInfoFn batch_info = [&](const std::vector<size_t>& batch) {
    BatchInfo info{batch.size(), 0.0};
    for (size_t idx : batch) info.weight_sum += unweighted ? clip_size[idx] : clip_weight[idx];
    return info;
  };

  size_t run_epochs = 0;
  bool completed = true;
  while (st.epochs_done < config.stage2_epochs) {
    if (config.stop_after_epochs && run_epochs >= *config.stop_after_epochs) {
      completed = false;
      break;
    }
    const size_t epoch = st.epochs_done;
    ClipLossFn loss = [&, epoch](size_t clip, int shift, const PredictionBundle& s, const PredictionBundle& t,
                                 const BatchInfo& info) {
      const Stage2Target& tgt = plan.per_clip[clip];
      const Matrix targets = shift_frames(tgt.targets, shift);
      const size_t frames = s.frame_probs.rows();
      const size_t classes = s.frame_probs.cols();
      ClipOutcome out;
      out.grads = LossGrads::zeros(frames, classes);
      if (info.weight_sum > 0.0) {
        if (unweighted) {
          double sum = 0.0;
          for (size_t i = 0; i < targets.size(); ++i) {
            const double y = s.frame_probs.values()[i];
            sum += bce(y, targets.values()[i]);
            out.grads.frame.values()[i] = bce_grad(y, targets.values()[i]) / info.weight_sum;
          }
          out.class_loss = sum / info.weight_sum;
        } else {
          WeightedSum ws = weighted_frame_sum(s.frame_probs, targets, shift_frames(tgt.weights, shift));
          out.class_loss = ws.numerator / info.weight_sum;
          for (size_t i = 0; i < ws.grad.size(); ++i)
            out.grads.frame.values()[i] = ws.grad.values()[i] / info.weight_sum;
        }
      }
      out.total = out.class_loss;
      if (config.stage2_consistency) {
        LossResult con = consistency_loss(s, t);
        const double mu = mu_schedule(epoch, config.loss);
        const double scale = mu / static_cast<double>(info.size);
        out.consistency = con.value / static_cast<double>(info.size);
        out.total += mu * out.consistency;
        out.grads.add(con.grads, scale);
      }
      return out;
    };
    EpochPlan eplan{kRetrainTag, epoch, TrainableGroups::all(), {}};
    EpochRecord rec = run_epoch(clips, config, eplan, st.student, st.teacher, st.adam, loss, batch_info,
                                st.report.step_losses);
    rec.phase = kPhaseRetrain;
    st.report.epochs.push_back(rec);
    ++st.epochs_done;
    ++run_epochs;
    if (out_dir) write_outputs(*out_dir, config, "stage2", st);
  }
  if (out_dir) {
    st.report.checkpoint = "teacher.ckpt";
    write_outputs(*out_dir, config, "stage2", st);
  }
  st.report.wall_clock_sec = seconds_since(t0);
  if (out_dir) write_timing(*out_dir, st.report.wall_clock_sec);
  return StageResult{std::move(st.student), std::move(st.teacher), std::move(st.report), completed};
}

std::vector<PredictionBundle> predict(const ModelParams& params, const std::vector<const FeatureClip*>& clips,
                                      size_t threads) {
  std::vector<PredictionBundle> out(clips.size());
  parallel_for(clips.size(), threads, [&](size_t i) {
    out[i] = forward(clips[i]->features, params);
    out[i].trace = ForwardTrace{};
  });
  return out;
}

DecodeConfig default_decode_config(const Dataset& dataset, double ratio) {
  DecodeConfig d;
  d.frame_rate = dataset.spec.frame_rate;
  auto durations = mean_durations_from_labels(dataset.split(Split::Strong), dataset.spec.num_classes,
                                              dataset.spec.clip_seconds() / 10.0);
  d.class_windows = class_windows_from_durations(durations, d.frame_rate, ratio);
  return d;
}

Evaluation evaluate(const ModelParams& params, const Dataset& dataset, Split split, const DecodeConfig& decode,
                    bool segment, size_t threads) {
  const auto clips = dataset.split(split);
  if (clips.empty()) throw DataError("evaluate: split " + to_string(split) + " is empty");
  const size_t classes = dataset.spec.num_classes;
  const auto bundles = predict(params, clips, threads);
  std::vector<ClassCounts> event_counts, segment_counts;
  std::vector<Matrix> probs, conf, truth;
  for (size_t i = 0; i < clips.size(); ++i) {
    const EventList& ref = dataset.hidden_truth.at(clips[i]->id);
    const EventList est = decode_events(bundles[i].frame_probs, decode.threshold, decode.class_windows,
                                        decode.frame_rate);
    add_counts(event_counts, event_based_counts(ref, est, classes));
    if (segment)
      add_counts(segment_counts, segment_based_counts(ref, est, classes, dataset.spec.clip_seconds()));
    probs.push_back(bundles[i].frame_probs);
    conf.push_back(bundles[i].confidence);
    truth.push_back(rasterize_events(ref, dataset.spec.frames_per_clip, classes, dataset.spec.frame_rate));
  }
  Evaluation out;
  out.scores.event = score_block(event_counts);
  if (segment) out.scores.segment = score_block(segment_counts);
  out.reliability = confidence_reliability(probs, conf, truth);
  return out;
}

ScoreReport evaluate_reference(const Dataset& dataset, Split split) {
  const size_t classes = dataset.spec.num_classes;
  const std::vector<size_t> ones(classes, 1);
  std::vector<ClassCounts> event_counts, segment_counts;
  for (const FeatureClip* clip : dataset.split(split)) {
    const EventList ref = merge_events(dataset.hidden_truth.at(clip->id));
    Matrix raster = rasterize_events(ref, dataset.spec.frames_per_clip, classes, dataset.spec.frame_rate);
    const EventList est = decode_events(raster, 0.5, ones, dataset.spec.frame_rate);
    add_counts(event_counts, event_based_counts(ref, est, classes));
    add_counts(segment_counts, segment_based_counts(ref, est, classes, dataset.spec.clip_seconds()));
  }
  return ScoreReport{score_block(event_counts), score_block(segment_counts)};
}

}  // namespace milpool
