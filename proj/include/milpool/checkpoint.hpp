// include/milpool/checkpoint.hpp

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

#ifndef MILPOOL_CHECKPOINT_HPP_
#define MILPOOL_CHECKPOINT_HPP_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "milpool/frame_model.hpp"

namespace milpool {

// Checkpoint file layout (all integers little-endian):
//
//   bytes 0..7    magic "MILPCKPT"
//   u64           header length in bytes
//   ...           UTF-8 JSON header
//   u64           number of doubles in the blob
//   ...           IEEE-754 binary64 values, little-endian
//
// The header carries "format_version", "role" (student / teacher /
// optimizer / training-state), "epoch", "config", "pooling", "fields"
// (name + length of each blob segment, in blob order), "blob_crc32" and any
// caller-supplied extras such as the loss curve.
//
// Model blobs list blocks in for_each_block(params, false, ...) order:
// hidden{l}.weights, hidden{l}.bias for each layer, class_head.weights,
// class_head.bias, confidence_head.weights, confidence_head.bias,
// pooling.n, pooling.beta, pooling.attention. Matrices are row-major.

inline constexpr int kCheckpointVersion = 1;

using Json = nlohmann::ordered_json;

Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& j);

/// Writes header + blob to `path` atomically (temp file, then rename).
void write_blob_file(const std::filesystem::path& path, Json header, std::span<const double> blob);

struct BlobFile {
  Json header;
  std::vector<double> blob;
};

/// Throws DataError on bad magic, version mismatch, truncation or checksum failure.
BlobFile read_blob_file(const std::filesystem::path& path);

struct ModelCheckpoint {
  ModelConfig config;
  ModelParams params;
  std::string role;
  size_t epoch = 0;
  Json header;
};

void save_model(const std::filesystem::path& path, const ModelParams& params,
                const ModelConfig& config, const std::string& role, size_t epoch,
                const Json& extra = Json::object());

ModelCheckpoint load_model(const std::filesystem::path& path);

/// Atomic text write (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace milpool

#endif  // MILPOOL_CHECKPOINT_HPP_
