// include/milpool/mean_teacher.hpp

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

#ifndef MILPOOL_MEAN_TEACHER_HPP_
#define MILPOOL_MEAN_TEACHER_HPP_

#include <optional>
#include <utility>
#include <vector>

#include "milpool/frame_model.hpp"
#include "milpool/losses.hpp"
#include "milpool/numerics.hpp"

namespace milpool {

/// Input perturbation: circular time shift plus additive Gaussian noise.
struct NoiseConfig {
  double shift_std_frames = 16.0;
  double gaussian_std = 0.1;

  void validate() const;
};

/// Integer shift round(N(0, std^2)).
int draw_shift(Rng& rng, double shift_std_frames);

/// Row i of the input lands on row (i + shift) mod T.
Matrix shift_frames(const Matrix& m, int shift);

Matrix add_gaussian_noise(const Matrix& features, double stddev, Rng& rng);

struct NoisyClip {
  Matrix features;
  std::optional<FrameTargets> labels;
  int shift = 0;
};

/// Shift (and relabel) then add feature noise. Strong frame labels move with
/// the features; weak and unlabeled targets pass through.
NoisyClip apply_noise(const Matrix& features, const FrameTargets* labels, const NoiseConfig& config,
                      Rng& rng);

struct TeacherState {
  ModelParams params;
  double decay = 0.999;
};

/// theta' <- decay * theta' + (1 - decay) * theta, over every block including
/// pooling parameters. `synced` groups use decay 0 (teacher copies student).
void ema_update(TeacherState& teacher, const ModelParams& student,
                const std::vector<ParamGroup>& synced = {});

/// Copies the listed groups from student to teacher and leaves the rest alone.
void sync_groups(TeacherState& teacher, const ModelParams& student, const std::vector<ParamGroup>& groups);

}  // namespace milpool

#endif  // MILPOOL_MEAN_TEACHER_HPP_
