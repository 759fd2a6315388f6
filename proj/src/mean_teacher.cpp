// src/mean_teacher.cpp

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

#include "milpool/mean_teacher.hpp"

#include <algorithm>
#include <cmath>

namespace milpool {

void NoiseConfig::validate() const {
  if (shift_std_frames < 0.0 || gaussian_std < 0.0) throw DataError("noise deviations must be >= 0");
}

int draw_shift(Rng& rng, double shift_std_frames) {
  return static_cast<int>(std::lround(rng.gaussian(0.0, shift_std_frames)));
}

Matrix shift_frames(const Matrix& m, int shift) {
  const long frames = static_cast<long>(m.rows());
  if (frames == 0 || shift == 0) return m;
  Matrix out(m.rows(), m.cols());
  for (long i = 0; i < frames; ++i) {
    const long dst = ((i + shift) % frames + frames) % frames;
    auto src_row = m.row(static_cast<size_t>(i));
    std::copy(src_row.begin(), src_row.end(), out.row(static_cast<size_t>(dst)).begin());
  }
  return out;
}

Matrix add_gaussian_noise(const Matrix& features, double stddev, Rng& rng) {
  if (stddev == 0.0) return features;
  Matrix out = features;
  for (double& v : out.values()) v += rng.gaussian(0.0, stddev);
  return out;
}

NoisyClip apply_noise(const Matrix& features, const FrameTargets* labels, const NoiseConfig& config,
                      Rng& rng) {
  config.validate();
  if (features.rows() == 0) throw Error("apply_noise: empty clip");
  NoisyClip out;
  out.shift = draw_shift(rng, config.shift_std_frames);
  out.features = add_gaussian_noise(shift_frames(features, out.shift), config.gaussian_std, rng);
  if (labels != nullptr) {
    out.labels = *labels;
    if (labels->availability == Availability::Strong)
      out.labels->frame = shift_frames(labels->frame, out.shift);
  }
  return out;
}

void ema_update(TeacherState& teacher, const ModelParams& student,
                const std::vector<ParamGroup>& synced) {
  if (teacher.decay < 0.0 || teacher.decay >= 1.0) throw Error("ema_update: decay outside [0, 1)");
  std::vector<std::span<const double>> src;
  for_each_block(student, false, [&](const std::string&, ParamGroup, auto block) { src.push_back(block); });
  size_t b = 0;
  for_each_block(teacher.params, false, [&](const std::string&, ParamGroup g, std::span<double> block) {
    if (b >= src.size() || src[b].size() != block.size()) throw Error("ema_update: shape mismatch");
    const auto& s = src[b++];
    const bool sync = std::find(synced.begin(), synced.end(), g) != synced.end();
    const double d = sync ? 0.0 : teacher.decay;
    for (size_t i = 0; i < block.size(); ++i) block[i] = d * block[i] + (1.0 - d) * s[i];
  });
}

void sync_groups(TeacherState& teacher, const ModelParams& student, const std::vector<ParamGroup>& groups) {
  std::vector<std::span<const double>> src;
  for_each_block(student, false, [&](const std::string&, ParamGroup, auto block) { src.push_back(block); });
  size_t b = 0;
  for_each_block(teacher.params, false, [&](const std::string&, ParamGroup g, std::span<double> block) {
    if (b >= src.size() || src[b].size() != block.size()) throw Error("sync_groups: shape mismatch");
    const auto& s = src[b++];
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) return;
    std::copy(s.begin(), s.end(), block.begin());
  });
}

}  // namespace milpool
