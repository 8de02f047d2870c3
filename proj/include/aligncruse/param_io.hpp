// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "aligncruse/model.hpp"

// ACRS container: "ACRS", u32 version, u32 record count, then per record
// u32 name length, name bytes, u32 dtype, u32 rank, u32 dims, payload. All
// integers and floats are little-endian.
namespace acrs::io {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class Dtype : std::uint32_t { kF32 = 0, kF64 = 1, kText = 2 };

struct ParamFile {
  ModelConfig config;
  ParamStore store;
  // Optimizer moments and other training state, keyed by record name.
  std::map<std::string, Tensor> extra;
  // JSON text of the training-state record; empty for plain parameter files.
  std::string train_state;
};

// Writes parameters as `dtype` (f32 or f64). Extra tensors are always f64.
void save(const std::string& path, const ModelConfig& cfg, const ParamStore& store,
          Dtype dtype = Dtype::kF64, const std::map<std::string, Tensor>& extra = {},
          const std::string& train_state = {});

// Loads and validates shapes against the embedded config. When `expected` is
// given, its config must match the file's.
ParamFile load(const std::string& path, const ModelConfig* expected = nullptr);

}  // namespace acrs::io
