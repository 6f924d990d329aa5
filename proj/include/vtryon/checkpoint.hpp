// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint container:
//
//   "VTRYCKPT"                 8-byte magic
//   u32 format_version
//   u64 manifest size, manifest JSON (UTF-8)
//   u64 array count
//   per array: u32 name size, name, u8 element type (1 = f64), u32 rank,
//              rank x i32 dims, raw little-endian elements
//
// All integers are little-endian.

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vtryon/nn.hpp"
#include "vtryon/tensor.hpp"

namespace vtryon::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Checkpoint {
  nlohmann::ordered_json manifest;
  std::vector<std::pair<std::string, Tensor>> arrays;

  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  void put(const std::string& name, Tensor t);
};

// Writes atomically (temporary file then rename).
void save(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

// Adds every parameter value under its name.
void put_params(Checkpoint& c, const nn::ParamList& params);
// Copies stored values into the parameters; shapes must match exactly.
void load_params(const Checkpoint& c, const nn::ParamList& params);

}  // namespace vtryon::ckpt
