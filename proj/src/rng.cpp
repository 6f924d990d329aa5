// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/rng.hpp"

#include <sstream>

#include "vtryon/error.hpp"

namespace vtryon {

Tensor Rng::normal_tensor(const Shape& shape) {
  Tensor t(shape);
  fill_normal(t);
  return t;
}

void Rng::fill_normal(Tensor& t) {
  for (double& v : t.vec()) v = normal_(engine_);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_ << ' ' << uniform_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> normal_ >> uniform_;
  require(!is.fail(), ErrorKind::kFormat, "malformed generator state");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view id) {
  return splitmix64(hash_bytes(id.data(), id.size(), splitmix64(seed)));
}

}  // namespace vtryon
