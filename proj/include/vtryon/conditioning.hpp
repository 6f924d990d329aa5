// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Frozen image encoder, learned-query token projection and token assembly.

#pragma once

#include <string>
#include <vector>

#include "vtryon/nn.hpp"

namespace vtryon::cond {

enum class SourceTag { kPerson = 0, kCloth = 1, kMask = 2, kWarpedCloth = 3, kNull = 4 };
inline constexpr int kNumSourceTags = 5;
std::string to_string(SourceTag tag);

struct EncoderConfig {
  // One stride-2 3x3 conv per entry; the last width is the feature dim.
  std::vector<int> widths{16, 32, 64};
  std::uint64_t seed = 20260101;
};

void validate(const EncoderConfig& cfg);

// Fixed-seed random conv net shared by every image source. Weights never
// require gradients.
class FrozenEncoder {
 public:
  FrozenEncoder() = default;
  explicit FrozenEncoder(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  int feature_dim() const { return cfg_.widths.back(); }
  int stride() const { return 1 << static_cast<int>(cfg_.widths.size()); }

  // Per-layer activations for a batch [N, H, W, 3].
  std::vector<ag::Var> layers(const ag::Var& x) const;
  // Feature grid (gh, gw, fc) of an image, or (N, gh, gw, fc) of a batch.
  // Single-channel inputs (masks) are replicated to three channels.
  Tensor features(const Tensor& image) const;
  // Differentiable variant on a batch [N, H, W, 3].
  ag::Var features(const ag::Var& x) const;

  nn::ParamList params() const;
  std::uint64_t weights_hash() const;

 private:
  EncoderConfig cfg_;
  std::vector<nn::Conv2d> convs_;
};

// (gh, gw, fc) or (N, gh, gw, fc) -> [N, gh*gw, fc].
Tensor flatten_grid(const Tensor& grid);
// Replicates a (.., 1) tensor to three channels; other inputs pass through.
Tensor to_rgb(const Tensor& image);

struct ProjectionConfig {
  int num_queries = 8;
  int token_dim = 64;
  int feature_dim = 64;
  int heads = 2;
  int ff_mult = 2;
};

void validate(const ProjectionConfig& cfg);

// n learned queries attend over the flattened feature grid (one attention
// block plus feed-forward); the source's segment embedding is added to every
// output token.
class Projection {
 public:
  Projection() = default;
  Projection(const ProjectionConfig& cfg, Rng& rng);

  const ProjectionConfig& config() const { return cfg_; }
  // features [N, L, fc] -> tokens [N, n, d]. `probs` receives [N, heads, n, L].
  ag::Var operator()(const ag::Var& features, SourceTag tag, Tensor* probs = nullptr) const;
  // Zeroes the output map (weight and bias).
  void zero_output();
  void params(const std::string& prefix, nn::ParamList& out) const;

  ag::Var queries;
  nn::Linear to_q, to_k, to_v, attn_out;
  nn::LayerNorm ff_norm;
  nn::Linear ff1, ff2, out;
  std::vector<ag::Var> segments;  // one [d] vector per SourceTag

 private:
  ProjectionConfig cfg_;
};

// Raw features used directly as tokens (projection bypass); requires fc == d.
ag::Var raw_tokens(const ag::Var& features, int token_dim);

// Concatenates token sequences [N, n_i, d] along the sequence axis.
ag::Var concat_tokens(const std::vector<ag::Var>& parts);

}  // namespace vtryon::cond
