// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Layers shared by the autoencoder, the conditioning projection and both UNets.

#pragma once

#include <string>
#include <vector>

#include "vtryon/autograd.hpp"
#include "vtryon/rng.hpp"

namespace vtryon::nn {

using ag::Var;

struct NamedParam {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedParam>;

std::uint64_t hash_params(const ParamList& params);
std::size_t count_params(const ParamList& params);

// Largest group count <= max_groups that divides channels.
int pick_groups(int channels, int max_groups);

struct Linear {
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true);
  Var operator()(const Var& x) const { return ag::linear(x, w, b); }
  void zero();
  void params(const std::string& prefix, ParamList& out) const;
  Var w, b;
};

struct Conv2d {
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, Rng& rng);
  Var operator()(const Var& x) const {
    return ag::conv2d(x, w, b, kernel, stride, kernel / 2);
  }
  void params(const std::string& prefix, ParamList& out) const;
  int in = 0, out = 0, kernel = 1, stride = 1;
  Var w, b;
};

struct GroupNorm {
  GroupNorm() = default;
  GroupNorm(int channels, int groups);
  Var operator()(const Var& x) const { return ag::group_norm(x, gamma, beta, groups); }
  void params(const std::string& prefix, ParamList& out) const;
  int groups = 1;
  Var gamma, beta;
};

struct LayerNorm {
  LayerNorm() = default;
  explicit LayerNorm(int channels);
  Var operator()(const Var& x) const { return ag::layer_norm(x, gamma, beta); }
  void params(const std::string& prefix, ParamList& out) const;
  Var gamma, beta;
};

// GN-SiLU-conv twice with an optional per-channel time-embedding shift and a
// 1x1 shortcut when the width changes.
struct ResBlock {
  ResBlock() = default;
  ResBlock(int in, int out, int temb_dim, int max_groups, Rng& rng);
  Var operator()(const Var& x, const Var& temb) const;
  void params(const std::string& prefix, ParamList& out) const;
  GroupNorm norm1, norm2;
  Conv2d conv1, conv2;
  Linear temb_proj;
  Conv2d shortcut;
  bool has_temb = false;
  bool has_shortcut = false;
};

// Residual cross-attention: h + Wo * Attn(LN(h) Wq, ctx Wk, ctx Wv).
struct CrossAttention {
  CrossAttention() = default;
  CrossAttention(int channels, int context_dim, int heads, Rng& rng);
  // h: [N, H, W, C] (or [N, L, C]); context: [N, Lk, context_dim].
  Var operator()(const Var& h, const Var& context, Tensor* probs = nullptr) const;
  void params(const std::string& prefix, ParamList& out) const;
  int heads = 1;
  LayerNorm norm;
  Linear to_q, to_k, to_v, to_out;
};

// Sinusoidal features of integer timesteps: [N, dim].
Tensor sinusoidal_embedding(const std::vector<int>& timesteps, int dim);

struct TimeEmbedding {
  TimeEmbedding() = default;
  TimeEmbedding(int base_dim, int embed_dim, Rng& rng);
  Var operator()(const std::vector<int>& timesteps) const;
  void params(const std::string& prefix, ParamList& out) const;
  int base_dim = 0;
  Linear fc1, fc2;
};

}  // namespace vtryon::nn
