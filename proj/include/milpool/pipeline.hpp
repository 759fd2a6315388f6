// include/milpool/pipeline.hpp

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

#ifndef MILPOOL_PIPELINE_HPP_
#define MILPOOL_PIPELINE_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "milpool/checkpoint.hpp"
#include "milpool/frame_model.hpp"
#include "milpool/losses.hpp"
#include "milpool/mean_teacher.hpp"
#include "milpool/sed_metrics.hpp"
#include "milpool/synthdata.hpp"

namespace milpool {

/// How stage two turns pseudo-labels into frame targets and loss weights.
enum class Stage2Weighting {
  Confidence,    // c' = alpha * c + (1 - alpha), soft targets (the C-SSED scheme)
  Unweighted,    // plain mean BCE on soft targets, no weights at all
  Prob09,        // keep posterior >= 0.9 as hard positives, equal weight
  ProbWeighted,  // all frames, weight alpha * posterior + (1 - alpha)
  Prob05,        // keep posterior >= 0.5, confidence weights
};

std::string to_string(Stage2Weighting w);
Stage2Weighting parse_weighting(const std::string& name);

struct TrainConfig {
  ModelConfig model;
  AdamConfig adam;
  LossWeights loss;
  NoiseConfig noise;
  double ema_decay = 0.999;
  size_t classification_epochs = 40;
  size_t confidence_epochs = 5;
  size_t stage2_epochs = 20;
  size_t batch_size = 8;
  uint64_t seed = 42;
  Stage2Weighting weighting = Stage2Weighting::Confidence;
  bool stage2_consistency = true;
  bool stage2_warm_start = true;
  /// Worker threads for per-clip work. Results do not depend on it.
  size_t threads = 1;
  /// Stop after this many epochs of the current stage (simulates an
  /// interrupted run; training resumes from the saved state).
  std::optional<size_t> stop_after_epochs;

  void validate() const;
};

Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);

struct EpochRecord {
  size_t epoch = 0;
  std::string phase;
  double class_loss = 0.0;
  double consistency = 0.0;
  double confidence = 0.0;
  double total = 0.0;
  std::vector<double> n;  // student pooling exponent(s) after the epoch
};

struct StageReport {
  std::vector<EpochRecord> epochs;
  /// Objective value of every optimizer step, in order.
  std::vector<double> step_losses;
  double wall_clock_sec = 0.0;
  std::string checkpoint;  // relative to the run directory
  /// Stage two: frames given zero weight by the ablation filter.
  size_t discarded_frames = 0;
  bool confidence_free = false;

  /// n trajectory restricted to one phase ("classification", "confidence", "retrain").
  std::vector<std::vector<double>> n_trajectory(const std::string& phase) const;
};

Json to_json(const StageReport& report);
StageReport stage_report_from_json(const Json& j);

struct StageResult {
  ModelParams student;
  TeacherState teacher;
  StageReport report;
  /// False when stop_after_epochs interrupted the stage.
  bool completed = true;
};

/// Stage one: classification phase (confidence head frozen, no hint) then
/// confidence phase (only the confidence head trains, full loss). When
/// `out_dir` is given, checkpoints and reports are written there after
/// every epoch and an existing state file is resumed.
StageResult train_stage1(const std::vector<const FeatureClip*>& clips, const TrainConfig& config,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt);

enum class Provenance { StrongGroundTruth, WeakRevised, UnlabeledRaw };

std::string to_string(Provenance p);

/// Stage-two supervision for one clip. Holds no ground truth for weak or
/// unlabeled clips: targets come from the teacher, revised by weak labels.
struct PseudoLabel {
  size_t clip_index = 0;  // into the clip list given to generate_pseudo_labels
  Provenance provenance = Provenance::UnlabeledRaw;
  Matrix targets;     // T x C soft targets
  Matrix confidence;  // T x C
  Matrix revised;     // T x C, 1 where a revision rule fixed target and confidence
};

struct PseudoLabelSet {
  std::vector<PseudoLabel> entries;
};

PseudoLabelSet generate_pseudo_labels(const ModelParams& teacher,
                                      const std::vector<const FeatureClip*>& clips, size_t threads = 1);

struct Stage2Target {
  Matrix targets;
  Matrix weights;
};

struct Stage2Plan {
  std::vector<Stage2Target> per_clip;  // aligned with PseudoLabelSet::entries
  size_t discarded_frames = 0;
};

Stage2Plan build_stage2_targets(const PseudoLabelSet& pseudo, Stage2Weighting weighting, double alpha);

/// Stage two: retraining on pseudo-labels with confidence-weighted frame
/// BCE plus consistency; clip outputs use max pooling and carry no loss.
StageResult train_stage2(const std::vector<const FeatureClip*>& clips, const PseudoLabelSet& pseudo,
                         const ModelParams& stage1_student, const TrainConfig& config,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Noise-free forward passes.
std::vector<PredictionBundle> predict(const ModelParams& params, const std::vector<const FeatureClip*>& clips,
                                      size_t threads = 1);

struct DecodeConfig {
  double threshold = 0.5;
  std::vector<size_t> class_windows;
  double frame_rate = 25.0;
};

/// Windows proportional to the mean strong-label durations of the training split.
DecodeConfig default_decode_config(const Dataset& dataset, double ratio = kDefaultWindowRatio);

struct Evaluation {
  ScoreReport scores;
  ReliabilityReport reliability;
};

Evaluation evaluate(const ModelParams& params, const Dataset& dataset, Split split,
                    const DecodeConfig& decode, bool segment = true, size_t threads = 1);

/// Scores ground truth decoded from its clean frame labels (window 1,
/// threshold 0.5) against the truth merged per class. Same-class overlaps
/// are indistinguishable in frame labels, hence the merge.
ScoreReport evaluate_reference(const Dataset& dataset, Split split);

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
void parallel_for(size_t count, size_t threads, const std::function<void(size_t)>& fn);

/// MILPOOL_THREADS, or 1 when unset/invalid.
size_t threads_from_env();

}  // namespace milpool

#endif  // MILPOOL_PIPELINE_HPP_
