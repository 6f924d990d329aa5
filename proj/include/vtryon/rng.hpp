// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "vtryon/tensor.hpp"

namespace vtryon {

// Explicit seeded generator. Every stochastic draw in the library goes through
// an instance passed by argument.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  Tensor normal_tensor(const Shape& shape);
  void fill_normal(Tensor& t);

  std::mt19937_64& engine() { return engine_; }

  // Full generator state (engine plus cached normal variate) as text.
  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);
// Stable per-item seed derived from a base seed and a string id.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view id);

}  // namespace vtryon
