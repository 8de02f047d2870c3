// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cstring>
#include <filesystem>
#include <fstream>

#include "aligncruse/param_io.hpp"
#include "doctest.h"

using namespace acrs;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("f64 files round-trip bit-exactly with extras and training state") {
  const auto cfg = ModelConfig::preset("tiny");
  const auto store = init_params(cfg, 1);
  std::map<std::string, Tensor> extra = {{"adam.m/gru.b", Tensor({3}, std::vector<double>{1.5, -2, 1e-300})}};
  const auto path = temp_path("acrs_rt64.acrs");
  io::save(path, cfg, store, io::Dtype::kF64, extra, R"({"epoch":3})");
  const auto f = io::load(path, &cfg);
  CHECK(f.config == cfg);
  CHECK(f.train_state == R"({"epoch":3})");
  REQUIRE(f.store.params().size() == store.params().size());
  for (const auto& [name, t] : store.params()) {
    CHECK(f.store.param(name).shape() == t.shape());
    CHECK(f.store.param(name).storage() == t.storage());
  }
  for (const auto& [name, t] : store.buffers()) CHECK(f.store.buffer(name).storage() == t.storage());
  CHECK(f.extra.at("adam.m/gru.b").storage() == extra.at("adam.m/gru.b").storage());
  std::filesystem::remove(path);
}

TEST_CASE("f32 files round-trip within single precision") {
  const auto cfg = ModelConfig::preset("tiny");
  const auto store = init_params(cfg, 2);
  const auto path = temp_path("acrs_rt32.acrs");
  io::save(path, cfg, store, io::Dtype::kF32);
  const auto f = io::load(path);
  for (const auto& [name, t] : store.params())
    for (Index i = 0; i < t.size(); ++i)
      CHECK(f.store.param(name)[i] == static_cast<double>(static_cast<float>(t[i])));
  std::filesystem::remove(path);
}

TEST_CASE("header layout is magic, version and record count") {
  const auto cfg = ModelConfig::preset("tiny");
  const auto path = temp_path("acrs_hdr.acrs");
  io::save(path, cfg, init_params(cfg, 3));
  const auto bytes = slurp(path);
  REQUIRE(bytes.size() > 12);
  CHECK(std::string(bytes.data(), 4) == "ACRS");
  std::uint32_t version = 0, count = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&count, bytes.data() + 8, 4);
  CHECK(version == io::kFormatVersion);
  const auto store = init_params(cfg, 3);
  CHECK(count == 1 + store.params().size() + store.buffers().size());
  std::filesystem::remove(path);
}

TEST_CASE("corrupted or mismatched files are rejected") {
  const auto cfg = ModelConfig::preset("tiny");
  const auto path = temp_path("acrs_bad.acrs");
  io::save(path, cfg, init_params(cfg, 4));
  const auto good = slurp(path);

  auto bytes = good;
  bytes[0] = 'X';
  dump(path, bytes);
  CHECK_THROWS_AS(io::load(path), Error);

  bytes = good;
  bytes[4] = 9;
  dump(path, bytes);
  CHECK_THROWS_AS(io::load(path), Error);

  bytes = good;
  bytes.resize(bytes.size() - 5);
  dump(path, bytes);
  CHECK_THROWS_AS(io::load(path), Error);

  dump(path, good);
  auto other = cfg;
  other.d_max = 32;
  CHECK_THROWS_AS(io::load(path, &other), Error);
  CHECK_THROWS_AS(io::load(temp_path("acrs_missing.acrs")), Error);

  auto store = init_params(cfg, 4);
  store.param("mask.b")[0] = std::nan("");
  io::save(path, cfg, store);
  CHECK_THROWS_AS(io::load(path), Error);
  std::filesystem::remove(path);
}
