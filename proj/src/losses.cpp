// src/losses.cpp

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

#include "milpool/losses.hpp"

#include <algorithm>
#include <cmath>

namespace milpool {

void LossWeights::validate() const {
  if (lambda < 0.0) throw DataError("lambda must be >= 0");
  if (mu_max < 0.0) throw DataError("mu_max must be >= 0");
  if (alpha < 0.0 || alpha > 1.0) throw DataError("alpha must lie in [0, 1]");
}

FrameTargets FrameTargets::strong(Matrix frame) {
  FrameTargets t;
  t.availability = Availability::Strong;
  t.clip.assign(frame.cols(), 0.0);
  for (size_t r = 0; r < frame.rows(); ++r)
    for (size_t k = 0; k < frame.cols(); ++k) t.clip[k] = std::max(t.clip[k], frame(r, k));
  t.frame = std::move(frame);
  return t;
}

FrameTargets FrameTargets::weak(std::vector<double> clip) {
  FrameTargets t;
  t.availability = Availability::Weak;
  t.clip = std::move(clip);
  return t;
}

FrameTargets FrameTargets::unlabeled() { return FrameTargets{}; }

void FrameTargets::validate(size_t frames, size_t classes) const {
  switch (availability) {
    case Availability::Strong:
      if (frame.rows() != frames || frame.cols() != classes || clip.size() != classes)
        throw Error("strong targets have the wrong shape");
      break;
    case Availability::Weak:
      if (!frame.empty() || clip.size() != classes) throw Error("weak targets have the wrong shape");
      break;
    case Availability::Unlabeled:
      if (!frame.empty() || !clip.empty()) throw Error("unlabeled clip carries targets");
      break;
  }
}

double bce(double pred, double target) {
  const double p = std::clamp(pred, kBceFloor, 1.0 - kBceFloor);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

double bce_grad(double pred, double target) {
  if (pred < kBceFloor || pred > 1.0 - kBceFloor) return 0.0;
  return (pred - target) / (pred * (1.0 - pred));
}

Matrix hinted_output(const Matrix& y_frame, const Matrix& confidence, const Matrix& t_frame) {
  if (!y_frame.same_shape(confidence) || !y_frame.same_shape(t_frame))
    throw Error("hinted_output: shape mismatch");
  Matrix out(y_frame.rows(), y_frame.cols());
  for (size_t i = 0; i < out.size(); ++i) {
    const double c = confidence.values()[i];
    out.values()[i] = (1.0 - c) * t_frame.values()[i] + c * y_frame.values()[i];
  }
  return out;
}

LossResult classification_loss(const PredictionBundle& student, const FrameTargets& targets,
                               bool use_hint) {
  const size_t frames = student.frame_probs.rows();
  const size_t classes = student.frame_probs.cols();
  targets.validate(frames, classes);
  if (use_hint && targets.availability != Availability::Strong)
    throw Error("classification_loss: hints need strong frame labels");

  LossResult out{0.0, LossGrads::zeros(frames, classes)};
  if (targets.availability == Availability::Unlabeled) return out;

  if (targets.availability == Availability::Strong) {
    const double norm = static_cast<double>(frames * classes);
    double frame_loss = 0.0;
    for (size_t i = 0; i < frames * classes; ++i) {
      const double y = student.frame_probs.values()[i];
      const double t = targets.frame.values()[i];
      if (use_hint) {
        const double c = student.confidence.values()[i];
        const double hinted = (1.0 - c) * t + c * y;
        frame_loss += bce(hinted, t);
        const double g = bce_grad(hinted, t) / norm;
        out.grads.frame.values()[i] = g * c;
        out.grads.confidence.values()[i] = g * (y - t);
      } else {
        frame_loss += bce(y, t);
        out.grads.frame.values()[i] = bce_grad(y, t) / norm;
      }
    }
    out.value += frame_loss / norm;
  }

  double clip_loss = 0.0;
  for (size_t k = 0; k < classes; ++k) {
    clip_loss += bce(student.clip_probs[k], targets.clip[k]);
    out.grads.clip[k] = bce_grad(student.clip_probs[k], targets.clip[k]) / static_cast<double>(classes);
  }
  out.value += clip_loss / static_cast<double>(classes);
  return out;
}

LossResult consistency_loss(const PredictionBundle& student, const PredictionBundle& teacher) {
  if (!student.frame_probs.same_shape(teacher.frame_probs) ||
      student.clip_probs.size() != teacher.clip_probs.size())
    throw Error("consistency_loss: shape mismatch");
  const size_t frames = student.frame_probs.rows();
  const size_t classes = student.frame_probs.cols();
  LossResult out{0.0, LossGrads::zeros(frames, classes)};
  const double n_frame = static_cast<double>(frames * classes);
  double frame_sq = 0.0;
  for (size_t i = 0; i < frames * classes; ++i) {
    const double d = student.frame_probs.values()[i] - teacher.frame_probs.values()[i];
    frame_sq += d * d;
    out.grads.frame.values()[i] = 2.0 * d / n_frame;
  }
  double clip_sq = 0.0;
  for (size_t k = 0; k < classes; ++k) {
    const double d = student.clip_probs[k] - teacher.clip_probs[k];
    clip_sq += d * d;
    out.grads.clip[k] = 2.0 * d / static_cast<double>(classes);
  }
  out.value = frame_sq / n_frame + clip_sq / static_cast<double>(classes);
  return out;
}

LossResult confidence_penalty(const Matrix& confidence) {
  LossResult out{0.0, LossGrads::zeros(confidence.rows(), confidence.cols())};
  const double norm = static_cast<double>(confidence.size());
  double acc = 0.0;
  for (size_t i = 0; i < confidence.size(); ++i) {
    const double raw = confidence.values()[i];
    const double c = std::clamp(raw, kBceFloor, 1.0);
    acc -= std::log(c);
    out.grads.confidence.values()[i] = raw < kBceFloor ? 0.0 : -1.0 / (c * norm);
  }
  out.value = acc / norm;
  return out;
}

double mu_schedule(size_t epoch, const LossWeights& weights) {
  if (weights.ramp_epochs == 0) return weights.mu_max;
  const double progress =
      std::min(static_cast<double>(epoch) / static_cast<double>(weights.ramp_epochs), 1.0);
  const double gap = 1.0 - progress;
  return weights.mu_max * std::exp(-5.0 * gap * gap);
}

Stage1Loss stage1_loss(const PredictionBundle& student, const PredictionBundle& teacher,
                       const FrameTargets& targets, size_t epoch, const LossWeights& weights,
                       Phase phase) {
  const bool strong = targets.availability == Availability::Strong;
  const bool hint = phase == Phase::Confidence && strong;

  Stage1Loss out;
  LossResult cls = classification_loss(student, targets, hint);
  LossResult con = consistency_loss(student, teacher);
  out.mu = mu_schedule(epoch, weights);
  out.class_loss = cls.value;
  out.consistency = con.value;
  out.grads = std::move(cls.grads);
  out.grads.add(con.grads, out.mu);
  out.total = out.class_loss + out.mu * out.consistency;
  if (phase == Phase::Confidence && strong) {
    LossResult pen = confidence_penalty(student.confidence);
    out.confidence = pen.value;
    out.total += weights.lambda * pen.value;
    out.grads.add(pen.grads, weights.lambda);
  }
  return out;
}

TrainableGroups stage1_trainable(Phase phase) {
  return phase == Phase::Classification ? TrainableGroups::all_but_confidence()
                                        : TrainableGroups::only_confidence();
}

void mask_frozen(ModelParams& grads, const TrainableGroups& groups) {
  for_each_block(grads, false, [&](const std::string&, ParamGroup g, std::span<double> block) {
    if (!groups.allows(g)) std::fill(block.begin(), block.end(), 0.0);
  });
}

Matrix interpolate_confidence(const Matrix& confidence, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw Error("interpolate_confidence: alpha outside [0, 1]");
  return map_values(confidence, [alpha](double c) { return alpha * c + (1.0 - alpha); });
}

WeightedSum weighted_frame_sum(const Matrix& frame_probs, const Matrix& targets, const Matrix& weights) {
  if (!frame_probs.same_shape(targets) || !frame_probs.same_shape(weights))
    throw Error("weighted_frame_loss: shape mismatch");
  WeightedSum out{0.0, 0.0, Matrix(frame_probs.rows(), frame_probs.cols())};
  for (size_t i = 0; i < frame_probs.size(); ++i) {
    const double w = weights.values()[i];
    const double y = frame_probs.values()[i];
    const double t = targets.values()[i];
    out.numerator += w * bce(y, t);
    out.weight_sum += w;
    out.grad.values()[i] = w * bce_grad(y, t);
  }
  return out;
}

LossResult weighted_frame_loss(const Matrix& frame_probs, const Matrix& targets, const Matrix& c_prime) {
  WeightedSum sum = weighted_frame_sum(frame_probs, targets, c_prime);
  if (!(sum.weight_sum > 0.0)) throw Error("weighted_frame_loss: all weights are zero");
  LossResult out{sum.numerator / sum.weight_sum,
                 LossGrads::zeros(frame_probs.rows(), frame_probs.cols())};
  for (size_t i = 0; i < sum.grad.size(); ++i)
    out.grads.frame.values()[i] = sum.grad.values()[i] / sum.weight_sum;
  return out;
}

LossResult mean_frame_bce(const Matrix& frame_probs, const Matrix& targets) {
  if (!frame_probs.same_shape(targets)) throw Error("mean_frame_bce: shape mismatch");
  LossResult out{0.0, LossGrads::zeros(frame_probs.rows(), frame_probs.cols())};
  const double norm = static_cast<double>(frame_probs.size());
  double acc = 0.0;
  for (size_t i = 0; i < frame_probs.size(); ++i) {
    acc += bce(frame_probs.values()[i], targets.values()[i]);
    out.grads.frame.values()[i] = bce_grad(frame_probs.values()[i], targets.values()[i]) / norm;
  }
  out.value = acc / norm;
  return out;
}

}  // namespace milpool
