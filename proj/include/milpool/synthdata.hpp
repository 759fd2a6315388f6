// include/milpool/synthdata.hpp

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

#ifndef MILPOOL_SYNTHDATA_HPP_
#define MILPOOL_SYNTHDATA_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "milpool/losses.hpp"
#include "milpool/numerics.hpp"
#include "milpool/sed_metrics.hpp"

namespace milpool {

// Synthetic polyphonic "spectrogram" clips.
//
// Each class owns a fixed random signature vector. An event adds
// gain * signature to every frame it covers on top of i.i.d. Gaussian
// background. Events of different classes overlap freely.

struct ClassProfile {
  double mean_duration = 1.0;   // seconds
  double occurrence_rate = 0.5; // expected events per clip
  uint64_t signature_seed = 0;
};

struct DatasetSpec {
  size_t num_classes = 10;
  size_t frames_per_clip = 250;
  size_t feature_dim = 32;
  double frame_rate = 25.0;
  size_t strong_count = 200;
  size_t weak_count = 150;
  size_t unlabeled_count = 1400;
  size_t validation_count = 100;
  std::vector<ClassProfile> classes;
  double noise_floor = 1.0;
  /// L2 norm of each class signature.
  double signature_norm = 3.0;
  /// Per-event gain is uniform on [gain_min, gain_max].
  double gain_min = 0.4;
  double gain_max = 1.4;
  double duration_log_std = 0.3;
  uint64_t seed = 42;

  /// Ten classes with mean durations from 0.5 s to 7 s.
  static DatasetSpec defaults();
  void validate() const;
  double clip_seconds() const { return static_cast<double>(frames_per_clip) / frame_rate; }
  std::vector<double> mean_durations() const;
};

enum class Split { Strong, Weak, Unlabeled, Validation };

std::string to_string(Split split);
Split parse_split(const std::string& name);

struct FeatureClip {
  std::string id;
  Split split = Split::Unlabeled;
  Matrix features;              // T x F, values representable as float32
  FrameTargets targets;         // strong / weak / unlabeled per split
  EventList strong_events;      // visible strong labels (strong and validation only)
};

/// Clips plus the generator's ground truth. `hidden_truth` exists for every
/// clip but is only meant for scoring; nothing in training reads it.
struct Dataset {
  DatasetSpec spec;
  std::vector<FeatureClip> clips;
  std::map<std::string, EventList> hidden_truth;

  std::vector<const FeatureClip*> split(Split s) const;
  std::vector<const FeatureClip*> training_clips() const;
};

Dataset generate_dataset(const DatasetSpec& spec);

inline constexpr int kDatasetVersion = 1;

/// Writes manifest.json, features.bin and truth.json into `dir`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Verifies version and per-clip checksums.
Dataset load_dataset(const std::filesystem::path& dir);

/// Generates and saves. Refuses to overwrite an existing manifest unless `force`.
Dataset generate_to_disk(const DatasetSpec& spec, const std::filesystem::path& dir, bool force);

/// Mean event duration per class over the given clips' strong labels.
/// Classes without strong events fall back to `fallback`.
std::vector<double> mean_durations_from_labels(const std::vector<const FeatureClip*>& clips,
                                               size_t num_classes, double fallback = 1.0);

}  // namespace milpool

#endif  // MILPOOL_SYNTHDATA_HPP_
