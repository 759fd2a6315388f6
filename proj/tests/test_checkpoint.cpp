// tests/test_checkpoint.cpp

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

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "milpool/checkpoint.hpp"

using namespace milpool;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const std::string& name) {
  const fs::path dir = fs::path(MILPOOL_TEST_TMP) / "checkpoint";
  fs::create_directories(dir);
  fs::remove(dir / name);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

ModelConfig config(PoolKind kind) {
  ModelConfig c;
  c.input_dim = 5;
  c.hidden_dims = {6, 4};
  c.num_classes = 3;
  c.context_radius = 1;
  c.seed = 9;
  c.pooling = kind;
  c.n_sharing = Sharing::PerClass;
  c.n_init = 2.5;
  c.beta_init = -0.7;
  return c;
}

}  // namespace

TEST_CASE("model checkpoints round-trip exactly") {
  for (PoolKind kind : {PoolKind::Power, PoolKind::Attention, PoolKind::Auto, PoolKind::Max}) {
    const ModelConfig c = config(kind);
    ModelParams p = init_params(c);
    p.pooling.n[1] = 3.25;
    const fs::path path = tmp_file("model_" + to_string(kind) + ".ckpt");
    save_model(path, p, c, "student", 17, Json{{"stage", "stage1"}});
    const ModelCheckpoint back = load_model(path);
    CHECK(bitwise_equal(back.params, p));
    CHECK(back.params.pooling.kind == kind);
    CHECK(back.role == "student");
    CHECK(back.epoch == 17);
    CHECK(back.header["stage"] == "stage1");
    CHECK(back.config.hidden_dims == c.hidden_dims);
    CHECK(back.config.n_sharing == Sharing::PerClass);

    const fs::path again = tmp_file("again_" + to_string(kind) + ".ckpt");
    save_model(again, back.params, back.config, back.role, back.epoch, Json{{"stage", "stage1"}});
    CHECK(slurp(path) == slurp(again));
  }
}

TEST_CASE("blob files keep doubles bit for bit") {
  const std::vector<double> blob{0.1, -0.0, 1e-300, std::numeric_limits<double>::max(), 42.0};
  const fs::path path = tmp_file("blob.bin");
  write_blob_file(path, Json{{"kind", "test"}}, blob);
  const BlobFile back = read_blob_file(path);
  REQUIRE(back.blob.size() == blob.size());
  CHECK(std::memcmp(back.blob.data(), blob.data(), blob.size() * sizeof(double)) == 0);
  CHECK(back.header["kind"] == "test");
  CHECK(slurp(path).rfind("MILPCKPT", 0) == 0);
}

TEST_CASE("corruption is detected") {
  const ModelConfig c = config(PoolKind::Power);
  const fs::path path = tmp_file("corrupt.ckpt");
  save_model(path, init_params(c), c, "teacher", 1);
  const std::string good = slurp(path);

  std::string flipped = good;
  flipped[flipped.size() - 3] = static_cast<char>(flipped[flipped.size() - 3] ^ 0x01);
  spit(path, flipped);
  CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("checksum"), DataError);

  spit(path, good.substr(0, good.size() - 8));
  CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("truncated"), DataError);

  spit(path, good.substr(0, 12));
  CHECK_THROWS_AS(load_model(path), DataError);

  spit(path, "not a checkpoint at all");
  CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("not a checkpoint"), DataError);

  CHECK_THROWS_AS(load_model(tmp_file("absent.ckpt")), DataError);
}

TEST_CASE("unknown format version is rejected") {
  const fs::path path = tmp_file("version.ckpt");
  write_blob_file(path, Json::object(), std::vector<double>{1.0});
  const std::string bytes = slurp(path);
  uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  Json header = Json::parse(bytes.substr(16, len));
  header["format_version"] = kCheckpointVersion + 1;
  const std::string text = header.dump();
  std::string rebuilt = bytes.substr(0, 8);
  const uint64_t new_len = text.size();
  rebuilt.append(reinterpret_cast<const char*>(&new_len), 8);
  rebuilt += text;
  rebuilt += bytes.substr(16 + len);
  spit(path, rebuilt);
  CHECK_THROWS_WITH_AS(read_blob_file(path), doctest::Contains("version"), DataError);
}

TEST_CASE("atomic text writes replace the whole file") {
  const fs::path path = tmp_file("text.txt");
  write_text_atomic(path, "first version, longer\n");
  write_text_atomic(path, "second\n");
  CHECK(slurp(path) == "second\n");
  for (const auto& entry : fs::directory_iterator(path.parent_path()))
    CHECK(entry.path().filename().string().find(".tmp") == std::string::npos);
}

TEST_CASE("model config json round-trip") {
  const ModelConfig c = config(PoolKind::Auto);
  const ModelConfig back = model_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(model_config_from_json(Json{{"input_dim", "x"}}), DataError);
}
