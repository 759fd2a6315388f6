// include/milpool/losses.hpp

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

#ifndef MILPOOL_LOSSES_HPP_
#define MILPOOL_LOSSES_HPP_

#include <span>
#include <vector>

#include "milpool/frame_model.hpp"
#include "milpool/numerics.hpp"

namespace milpool {

struct LossWeights {
  double lambda = 0.03;
  double mu_max = 1.0;
  size_t ramp_epochs = 15;
  double alpha = 1.0;

  void validate() const;
};

enum class Availability { Strong, Weak, Unlabeled };

/// Supervision attached to one clip.
///
/// Strong: `frame` is T x C and `clip` is its per-class max.
/// Weak: only `clip`. Unlabeled: neither.
struct FrameTargets {
  Availability availability = Availability::Unlabeled;
  Matrix frame;
  std::vector<double> clip;

  static FrameTargets strong(Matrix frame);
  static FrameTargets weak(std::vector<double> clip);
  static FrameTargets unlabeled();
  void validate(size_t frames, size_t classes) const;
};

inline constexpr double kBceFloor = 1e-7;

double bce(double pred, double target);
/// d bce / d pred; zero where the prediction sits outside the clamp range.
double bce_grad(double pred, double target);

Matrix hinted_output(const Matrix& y_frame, const Matrix& confidence, const Matrix& t_frame);

struct LossResult {
  double value = 0.0;
  LossGrads grads;
};

LossResult classification_loss(const PredictionBundle& student, const FrameTargets& targets,
                               bool use_hint);

/// Teacher outputs are constants; gradients are w.r.t. the student only.
LossResult consistency_loss(const PredictionBundle& student, const PredictionBundle& teacher);

LossResult confidence_penalty(const Matrix& confidence);

/// Exponential ramp-up mu_max * exp(-5 (1 - min(epoch / ramp, 1))^2).
double mu_schedule(size_t epoch, const LossWeights& weights);

enum class Phase { Classification, Confidence };

struct Stage1Loss {
  double class_loss = 0.0;
  double consistency = 0.0;
  double confidence = 0.0;
  double mu = 0.0;
  double total = 0.0;
  LossGrads grads;
};

/// L = L_class + mu(epoch) L_con + lambda L_c for one clip.
///
/// Classification phase: no hint, no confidence term, gradient w.r.t. the
/// confidence output is zero. Confidence phase: hinted frame loss on strong
/// clips and the -log(c) penalty on strong clips (the only clips where the
/// hint exists). Parameter freezing is applied by the optimizer through
/// stage1_trainable().
Stage1Loss stage1_loss(const PredictionBundle& student, const PredictionBundle& teacher,
                       const FrameTargets& targets, size_t epoch, const LossWeights& weights,
                       Phase phase);

TrainableGroups stage1_trainable(Phase phase);
/// Zeroes every gradient block the phase freezes.
void mask_frozen(ModelParams& grads, const TrainableGroups& groups);

Matrix interpolate_confidence(const Matrix& confidence, double alpha);

/// Numerator of the confidence-weighted frame loss: sum_ik w * bce, with its
/// gradient w.r.t. the frame probabilities. `weight_sum` is sum_ik w.
struct WeightedSum {
  double numerator = 0.0;
  double weight_sum = 0.0;
  Matrix grad;  // d numerator / d y
};

WeightedSum weighted_frame_sum(const Matrix& frame_probs, const Matrix& targets, const Matrix& weights);

/// sum_ik c' bce / sum_ik c'. Throws if every weight is zero.
LossResult weighted_frame_loss(const Matrix& frame_probs, const Matrix& targets, const Matrix& c_prime);

/// Plain mean BCE over all entries.
LossResult mean_frame_bce(const Matrix& frame_probs, const Matrix& targets);

}  // namespace milpool

#endif  // MILPOOL_LOSSES_HPP_
