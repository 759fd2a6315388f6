// src/checkpoint.cpp

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

#include "milpool/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace milpool {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'M', 'I', 'L', 'P', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64(const std::string& in, size_t pos) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::string encode_doubles(std::span<const double> values) {
  std::string out;
  out.reserve(values.size() * 8);
  for (double v : values) put_u64(out, std::bit_cast<uint64_t>(v));
  return out;
}

uint32_t crc_of(const std::string& bytes) {
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Json pooling_to_json(const PoolingSpec& spec) {
  return Json{{"kind", to_string(spec.kind)},
              {"sharing", to_string(spec.sharing)},
              {"n_min", spec.n_min},
              {"n_max", spec.n_max}};
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return Json{{"input_dim", c.input_dim},
              {"hidden_dims", c.hidden_dims},
              {"context_radius", c.context_radius},
              {"num_classes", c.num_classes},
              {"seed", c.seed},
              {"pooling", to_string(c.pooling)},
              {"n_sharing", to_string(c.n_sharing)},
              {"n_init", c.n_init},
              {"beta_init", c.beta_init},
              {"allow_negative_n", c.allow_negative_n}};
}

ModelConfig model_config_from_json(const Json& j) {
  try {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<size_t>();
    c.hidden_dims = j.at("hidden_dims").get<std::vector<size_t>>();
    c.context_radius = j.at("context_radius").get<size_t>();
    c.num_classes = j.at("num_classes").get<size_t>();
    c.seed = j.at("seed").get<uint64_t>();
    c.pooling = parse_pool_kind(j.at("pooling").get<std::string>());
    c.n_sharing = parse_sharing(j.at("n_sharing").get<std::string>());
    c.n_init = j.at("n_init").get<double>();
    c.beta_init = j.at("beta_init").get<double>();
    c.allow_negative_n = j.at("allow_negative_n").get<bool>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad model config: ") + e.what());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) { write_bytes_atomic(path, text); }

void write_blob_file(const fs::path& path, Json header, std::span<const double> blob) {
  std::string payload = encode_doubles(blob);
  header["format_version"] = kCheckpointVersion;
  header["blob_crc32"] = crc_of(payload);
  const std::string text = header.dump();
  std::string bytes(kMagic, sizeof(kMagic));
  put_u64(bytes, text.size());
  bytes += text;
  put_u64(bytes, blob.size());
  bytes += payload;
  write_bytes_atomic(path, bytes);
}

BlobFile read_blob_file(const fs::path& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  const uint64_t header_len = get_u64(bytes, 8);
  if (bytes.size() < 16 + header_len + 8) throw DataError("truncated checkpoint: " + path.string());
  BlobFile out;
  try {
    out.header = Json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (out.header.value("format_version", -1) != kCheckpointVersion)
    throw DataError("unsupported checkpoint version in " + path.string());
  const size_t count_pos = 16 + header_len;
  const uint64_t count = get_u64(bytes, count_pos);
  const size_t payload_pos = count_pos + 8;
  if (bytes.size() != payload_pos + count * 8) throw DataError("truncated checkpoint: " + path.string());
  const std::string payload = bytes.substr(payload_pos);
  if (out.header.value("blob_crc32", 0u) != crc_of(payload))
    throw DataError("checkpoint checksum mismatch: " + path.string());
  out.blob.resize(count);
  for (size_t i = 0; i < count; ++i) out.blob[i] = std::bit_cast<double>(get_u64(payload, i * 8));
  return out;
}

void save_model(const fs::path& path, const ModelParams& params, const ModelConfig& config,
                const std::string& role, size_t epoch, const Json& extra) {
  Json header = extra.is_object() ? extra : Json::object();
  header["role"] = role;
  header["epoch"] = epoch;
  header["config"] = to_json(config);
  header["pooling"] = pooling_to_json(params.pooling);
  Json fields = Json::array();
  std::vector<double> blob;
  for_each_block(params, false, [&](const std::string& name, ParamGroup, auto block) {
    fields.push_back(Json{{"name", name}, {"length", block.size()}});
    blob.insert(blob.end(), block.begin(), block.end());
  });
  header["fields"] = fields;
  write_blob_file(path, header, blob);
}

ModelCheckpoint load_model(const fs::path& path) {
  BlobFile file = read_blob_file(path);
  ModelCheckpoint out;
  out.header = file.header;
  try {
    out.config = model_config_from_json(file.header.at("config"));
    out.role = file.header.at("role").get<std::string>();
    out.epoch = file.header.at("epoch").get<size_t>();
    out.params = init_params(out.config);
    const Json& pj = file.header.at("pooling");
    out.params.pooling.kind = parse_pool_kind(pj.at("kind").get<std::string>());
    out.params.pooling.n_min = pj.at("n_min").get<double>();
    out.params.pooling.n_max = pj.at("n_max").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  size_t offset = 0;
  const Json& fields = file.header.at("fields");
  size_t f = 0;
  for_each_block(out.params, false, [&](const std::string& name, ParamGroup, std::span<double> block) {
    if (f >= fields.size() || fields[f].at("name") != name || fields[f].at("length") != block.size() ||
        offset + block.size() > file.blob.size())
      throw DataError("checkpoint layout does not match its config: " + path.string());
    std::copy_n(file.blob.begin() + static_cast<std::ptrdiff_t>(offset), block.size(), block.begin());
    offset += block.size();
    ++f;
  });
  if (offset != file.blob.size()) throw DataError("checkpoint has trailing parameters: " + path.string());
  return out;
}

}  // namespace milpool
