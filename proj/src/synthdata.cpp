// src/synthdata.cpp

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

#include "milpool/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "milpool/checkpoint.hpp"

namespace milpool {

namespace fs = std::filesystem;

DatasetSpec DatasetSpec::defaults() {
  DatasetSpec spec;
  const double durations[] = {0.5, 0.8, 1.2, 1.5, 2.0, 2.5, 3.0, 4.0, 5.5, 7.0};
  const double rates[] = {1.0, 0.9, 0.8, 0.7, 0.6, 0.55, 0.5, 0.45, 0.4, 0.35};
  for (size_t k = 0; k < 10; ++k) spec.classes.push_back({durations[k], rates[k], k});
  return spec;
}

void DatasetSpec::validate() const {
  if (num_classes == 0 || frames_per_clip < 2 || feature_dim == 0 || !(frame_rate > 0.0))
    throw DataError("dataset spec: dimensions must be positive");
  if (classes.size() != num_classes) throw DataError("dataset spec: need one profile per class");
  for (const auto& c : classes)
    if (!(c.mean_duration > 0.0) || c.occurrence_rate < 0.0)
      throw DataError("dataset spec: durations must be > 0 and rates >= 0");
  if (noise_floor < 0.0 || signature_norm < 0.0 || gain_min < 0.0 || gain_max < gain_min ||
      duration_log_std < 0.0)
    throw DataError("dataset spec: invalid noise or gain settings");
}

std::vector<double> DatasetSpec::mean_durations() const {
  std::vector<double> out;
  for (const auto& c : classes) out.push_back(c.mean_duration);
  return out;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Strong: return "strong";
    case Split::Weak: return "weak";
    case Split::Unlabeled: return "unlabeled";
    case Split::Validation: return "validation";
  }
  return "unknown";
}

Split parse_split(const std::string& name) {
  for (Split s : {Split::Strong, Split::Weak, Split::Unlabeled, Split::Validation})
    if (to_string(s) == name) return s;
  throw DataError("unknown split: " + name);
}

std::vector<const FeatureClip*> Dataset::split(Split s) const {
  std::vector<const FeatureClip*> out;
  for (const auto& c : clips)
    if (c.split == s) out.push_back(&c);
  return out;
}

std::vector<const FeatureClip*> Dataset::training_clips() const {
  std::vector<const FeatureClip*> out;
  for (const auto& c : clips)
    if (c.split != Split::Validation) out.push_back(&c);
  return out;
}

namespace {

enum Stream : uint64_t { kSignatureStream = 11, kClipStream = 12 };

std::vector<std::vector<double>> make_signatures(const DatasetSpec& spec) {
  std::vector<std::vector<double>> out;
  for (const auto& profile : spec.classes) {
    Rng rng = Rng::substream(spec.seed, {kSignatureStream, profile.signature_seed});
    std::vector<double> v(spec.feature_dim);
    double norm = 0.0;
    for (double& x : v) {
      x = rng.gaussian(0.0, 1.0);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x *= norm > 0.0 ? spec.signature_norm / norm : 0.0;
    out.push_back(std::move(v));
  }
  return out;
}

std::string clip_id(Split split, size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05zu", to_string(split).c_str(), index);
  return buf;
}

std::vector<double> weak_from_events(const EventList& events, size_t classes) {
  std::vector<double> out(classes, 0.0);
  for (const auto& e : events) out[e.cls] = 1.0;
  return out;
}

FrameTargets targets_for(Split split, const EventList& strong, const std::vector<double>& weak,
                         const DatasetSpec& spec) {
  switch (split) {
    case Split::Strong:
    case Split::Validation:
      return FrameTargets::strong(
          rasterize_events(strong, spec.frames_per_clip, spec.num_classes, spec.frame_rate));
    case Split::Weak:
      return FrameTargets::weak(weak);
    case Split::Unlabeled:
      return FrameTargets::unlabeled();
  }
  return FrameTargets::unlabeled();
}

void generate_clip(const DatasetSpec& spec, const std::vector<std::vector<double>>& signatures, Split split,
                   size_t index, Dataset& out) {
  Rng rng = Rng::substream(spec.seed, {kClipStream, static_cast<uint64_t>(split), index});
  const size_t frames = spec.frames_per_clip;
  EventList events;
  struct Placed {
    size_t cls, begin, end;
    double gain;
  };
  std::vector<Placed> placed;
  for (size_t k = 0; k < spec.num_classes; ++k) {
    const ClassProfile& profile = spec.classes[k];
    const int count = rng.poisson(profile.occurrence_rate);
    for (int e = 0; e < count; ++e) {
      const double sigma = spec.duration_log_std;
      const double seconds = std::exp(rng.gaussian(std::log(profile.mean_duration) - 0.5 * sigma * sigma, sigma));
      const long len = std::clamp<long>(std::lround(seconds * spec.frame_rate), 2, static_cast<long>(frames));
      const size_t begin = rng.uniform_int(frames - static_cast<size_t>(len) + 1);
      const size_t end = begin + static_cast<size_t>(len);
      const double gain = spec.gain_min + (spec.gain_max - spec.gain_min) * rng.uniform();
      placed.push_back({k, begin, end, gain});
      events.push_back({k, static_cast<double>(begin) / spec.frame_rate,
                        static_cast<double>(end) / spec.frame_rate});
    }
  }

  Matrix features(frames, spec.feature_dim);
  for (double& v : features.values()) v = rng.gaussian(0.0, spec.noise_floor);
  for (const Placed& p : placed) {
    const auto& sig = signatures[p.cls];
    for (size_t t = p.begin; t < p.end; ++t) {
      auto row = features.row(t);
      for (size_t f = 0; f < row.size(); ++f) row[f] += p.gain * sig[f];
    }
  }
  // Stored as float32 on disk; keep the in-memory copy identical.
  for (double& v : features.values()) v = static_cast<double>(static_cast<float>(v));

  FeatureClip clip;
  clip.id = clip_id(split, index);
  clip.split = split;
  clip.features = std::move(features);
  const auto weak = weak_from_events(events, spec.num_classes);
  if (split == Split::Strong || split == Split::Validation) clip.strong_events = events;
  clip.targets = targets_for(split, clip.strong_events, weak, spec);
  out.hidden_truth[clip.id] = events;
  out.clips.push_back(std::move(clip));
}

Json spec_to_json(const DatasetSpec& s) {
  Json classes = Json::array();
  for (const auto& c : s.classes)
    classes.push_back(Json{{"mean_duration", c.mean_duration},
                           {"occurrence_rate", c.occurrence_rate},
                           {"signature_seed", c.signature_seed}});
  return Json{{"num_classes", s.num_classes},
              {"frames_per_clip", s.frames_per_clip},
              {"feature_dim", s.feature_dim},
              {"frame_rate", s.frame_rate},
              {"strong_count", s.strong_count},
              {"weak_count", s.weak_count},
              {"unlabeled_count", s.unlabeled_count},
              {"validation_count", s.validation_count},
              {"classes", classes},
              {"noise_floor", s.noise_floor},
              {"signature_norm", s.signature_norm},
              {"gain_min", s.gain_min},
              {"gain_max", s.gain_max},
              {"duration_log_std", s.duration_log_std},
              {"seed", s.seed}};
}

DatasetSpec spec_from_json(const Json& j) {
  DatasetSpec s;
  s.num_classes = j.at("num_classes").get<size_t>();
  s.frames_per_clip = j.at("frames_per_clip").get<size_t>();
  s.feature_dim = j.at("feature_dim").get<size_t>();
  s.frame_rate = j.at("frame_rate").get<double>();
  s.strong_count = j.at("strong_count").get<size_t>();
  s.weak_count = j.at("weak_count").get<size_t>();
  s.unlabeled_count = j.at("unlabeled_count").get<size_t>();
  s.validation_count = j.at("validation_count").get<size_t>();
  for (const auto& c : j.at("classes"))
    s.classes.push_back({c.at("mean_duration").get<double>(), c.at("occurrence_rate").get<double>(),
                         c.at("signature_seed").get<uint64_t>()});
  s.noise_floor = j.at("noise_floor").get<double>();
  s.signature_norm = j.at("signature_norm").get<double>();
  s.gain_min = j.at("gain_min").get<double>();
  s.gain_max = j.at("gain_max").get<double>();
  s.duration_log_std = j.at("duration_log_std").get<double>();
  s.seed = j.at("seed").get<uint64_t>();
  s.validate();
  return s;
}

Json events_to_json(const EventList& events) {
  Json out = Json::array();
  for (const auto& e : events)
    out.push_back(Json{{"class", e.cls}, {"onset_sec", e.onset}, {"offset_sec", e.offset}});
  return out;
}

EventList events_from_json(const Json& j) {
  EventList out;
  for (const auto& e : j)
    out.push_back({e.at("class").get<size_t>(), e.at("onset_sec").get<double>(), e.at("offset_sec").get<double>()});
  return out;
}

std::string encode_features(const Matrix& m) {
  std::string out;
  out.reserve(m.size() * 4);
  for (double v : m.values()) {
    const uint32_t bits = std::bit_cast<uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

uint32_t crc_of(std::string_view bytes) {
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset out;
  out.spec = spec;
  const auto signatures = make_signatures(spec);
  const std::pair<Split, size_t> plan[] = {{Split::Strong, spec.strong_count},
                                           {Split::Weak, spec.weak_count},
                                           {Split::Unlabeled, spec.unlabeled_count},
                                           {Split::Validation, spec.validation_count}};
  for (const auto& [split, count] : plan)
    for (size_t i = 0; i < count; ++i) generate_clip(spec, signatures, split, i, out);
  return out;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  std::string blob;
  Json clips = Json::array();
  Json truth = Json::object();
  for (const auto& clip : dataset.clips) {
    const std::string bytes = encode_features(clip.features);
    Json rec{{"id", clip.id},
             {"split", to_string(clip.split)},
             {"offset", blob.size()},
             {"length", bytes.size()},
             {"frames", clip.features.rows()},
             {"checksum", crc_of(bytes)}};
    if (clip.split == Split::Strong || clip.split == Split::Weak || clip.split == Split::Validation)
      rec["weak_labels"] = clip.targets.clip;
    if (clip.split == Split::Strong || clip.split == Split::Validation)
      rec["strong_labels"] = events_to_json(clip.strong_events);
    clips.push_back(rec);
    blob += bytes;
    auto it = dataset.hidden_truth.find(clip.id);
    truth[clip.id] = events_to_json(it == dataset.hidden_truth.end() ? EventList{} : it->second);
  }
  Json manifest{{"version", kDatasetVersion},
                {"spec", spec_to_json(dataset.spec)},
                {"features_file", "features.bin"},
                {"clips", clips}};
  Json truth_doc{{"version", kDatasetVersion}, {"clips", truth}};
  write_text_atomic(dir / "features.bin", blob);
  write_text_atomic(dir / "truth.json", truth_doc.dump(1) + "\n");
  write_text_atomic(dir / "manifest.json", manifest.dump(1) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  Json manifest;
  try {
    manifest = Json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt manifest in " + dir.string() + ": " + e.what());
  }
  if (!manifest.contains("version") || manifest["version"] != kDatasetVersion)
    throw DataError("unsupported dataset version in " + (dir / "manifest.json").string());
  Dataset out;
  try {
    out.spec = spec_from_json(manifest.at("spec"));
    const std::string blob = read_file(dir / manifest.at("features_file").get<std::string>());
    const size_t frames = out.spec.frames_per_clip;
    const size_t dim = out.spec.feature_dim;
    for (const auto& rec : manifest.at("clips")) {
      FeatureClip clip;
      clip.id = rec.at("id").get<std::string>();
      clip.split = parse_split(rec.at("split").get<std::string>());
      const size_t offset = rec.at("offset").get<size_t>();
      const size_t length = rec.at("length").get<size_t>();
      if (rec.at("frames").get<size_t>() != frames || length != frames * dim * 4)
        throw DataError("clip " + clip.id + " has an unexpected size");
      if (offset + length > blob.size())
        throw DataError("checksum mismatch for clip " + clip.id + " (feature blob truncated)");
      const std::string_view bytes(blob.data() + offset, length);
      if (crc_of(bytes) != rec.at("checksum").get<uint32_t>())
        throw DataError("checksum mismatch for clip " + clip.id);
      clip.features = Matrix(frames, dim);
      for (size_t i = 0; i < frames * dim; ++i) {
        uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
        clip.features.values()[i] = static_cast<double>(std::bit_cast<float>(bits));
      }
      if (rec.contains("strong_labels")) clip.strong_events = events_from_json(rec["strong_labels"]);
      std::vector<double> weak;
      if (rec.contains("weak_labels")) weak = rec["weak_labels"].get<std::vector<double>>();
      clip.targets = targets_for(clip.split, clip.strong_events, weak, out.spec);
      out.clips.push_back(std::move(clip));
    }
    const Json truth = Json::parse(read_file(dir / "truth.json"));
    if (truth.value("version", -1) != kDatasetVersion) throw DataError("unsupported truth file version");
    for (const auto& [id, events] : truth.at("clips").items()) out.hidden_truth[id] = events_from_json(events);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt dataset in " + dir.string() + ": " + e.what());
  }
  return out;
}

Dataset generate_to_disk(const DatasetSpec& spec, const fs::path& dir, bool force) {
  if (fs::exists(dir / "manifest.json") && !force)
    throw DataError("dataset already exists in " + dir.string() + " (use --force to overwrite)");
  Dataset data = generate_dataset(spec);
  save_dataset(data, dir);
  return data;
}

std::vector<double> mean_durations_from_labels(const std::vector<const FeatureClip*>& clips,
                                               size_t num_classes, double fallback) {
  std::vector<double> total(num_classes, 0.0);
  std::vector<size_t> count(num_classes, 0);
  for (const FeatureClip* clip : clips)
    for (const auto& e : clip->strong_events) {
      total[e.cls] += e.offset - e.onset;
      ++count[e.cls];
    }
  std::vector<double> out(num_classes, fallback);
  for (size_t k = 0; k < num_classes; ++k)
    if (count[k] > 0) out[k] = total[k] / static_cast<double>(count[k]);
  return out;
}

}  // namespace milpool
