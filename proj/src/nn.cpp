// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/nn.hpp"

#include <cmath>
#include <numbers>

#include "vtryon/error.hpp"

namespace vtryon::nn {

namespace {

Var uniform_param(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return Var::parameter(std::move(t));
}

}  // namespace

std::uint64_t hash_params(const ParamList& params) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& p : params) {
    h = hash_bytes(p.name.data(), p.name.size(), h);
    h = hash_tensor(p.var.value(), h);
  }
  return h;
}

std::size_t count_params(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

int pick_groups(int channels, int max_groups) {
  for (int g = std::min(channels, max_groups); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

Linear::Linear(int in, int out, Rng& rng, bool bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  w = uniform_param({in, out}, bound, rng);
  if (bias) b = uniform_param({out}, bound, rng);
}

void Linear::zero() {
  for (double& v : w.mutable_value().vec()) v = 0.0;
  if (b.defined())
    for (double& v : b.mutable_value().vec()) v = 0.0;
}

void Linear::params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w});
  if (b.defined()) out.push_back({prefix + ".b", b});
}

Conv2d::Conv2d(int in_ch, int out_ch, int k, int s, Rng& rng)
    : in(in_ch), out(out_ch), kernel(k), stride(s) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(k * k * in_ch));
  w = uniform_param({k * k * in_ch, out_ch}, bound, rng);
  b = uniform_param({out_ch}, bound, rng);
}

void Conv2d::params(const std::string& prefix, ParamList& list) const {
  list.push_back({prefix + ".w", w});
  list.push_back({prefix + ".b", b});
}

GroupNorm::GroupNorm(int channels, int g)
    : groups(g),
      gamma(Var::parameter(Tensor({channels}, 1.0))),
      beta(Var::parameter(Tensor({channels}, 0.0))) {}

void GroupNorm::params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

LayerNorm::LayerNorm(int channels)
    : gamma(Var::parameter(Tensor({channels}, 1.0))),
      beta(Var::parameter(Tensor({channels}, 0.0))) {}

void LayerNorm::params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

ResBlock::ResBlock(int in, int out, int temb_dim, int max_groups, Rng& rng)
    : norm1(in, pick_groups(in, max_groups)),
      norm2(out, pick_groups(out, max_groups)),
      conv1(in, out, 3, 1, rng),
      conv2(out, out, 3, 1, rng),
      has_temb(temb_dim > 0),
      has_shortcut(in != out) {
  if (has_temb) temb_proj = Linear(temb_dim, out, rng);
  if (has_shortcut) shortcut = Conv2d(in, out, 1, 1, rng);
}

Var ResBlock::operator()(const Var& x, const Var& temb) const {
  Var h = conv1(ag::silu(norm1(x)));
  if (has_temb) h = ag::add_batch_channel(h, temb_proj(ag::silu(temb)));
  h = conv2(ag::silu(norm2(h)));
  return ag::add(has_shortcut ? shortcut(x) : x, h);
}

void ResBlock::params(const std::string& prefix, ParamList& out) const {
  norm1.params(prefix + ".norm1", out);
  conv1.params(prefix + ".conv1", out);
  if (has_temb) temb_proj.params(prefix + ".temb", out);
  norm2.params(prefix + ".norm2", out);
  conv2.params(prefix + ".conv2", out);
  if (has_shortcut) shortcut.params(prefix + ".shortcut", out);
}

CrossAttention::CrossAttention(int channels, int context_dim, int h, Rng& rng)
    : heads(h),
      norm(channels),
      to_q(channels, channels, rng, false),
      to_k(context_dim, channels, rng, false),
      to_v(context_dim, channels, rng, false),
      to_out(channels, channels, rng) {
  require(channels % heads == 0, ErrorKind::kInvalidConfig,
          "cross-attention width " + std::to_string(channels) + " not divisible by heads " +
              std::to_string(heads));
  // Residual branch starts closed.
  to_out.zero();
}

Var CrossAttention::operator()(const Var& h, const Var& context, Tensor* probs) const {
  require(context.value().rank() == 3 && context.value().dim(0) == h.value().dim(0),
          ErrorKind::kShapeMismatch,
          "cross-attention: context " + shape_str(context.shape()) + " vs features " +
              shape_str(h.shape()));
  require(context.value().dim(2) == to_k.w.value().dim(0), ErrorKind::kShapeMismatch,
          "cross-attention: context width " + std::to_string(context.value().dim(2)) +
              " does not match " + std::to_string(to_k.w.value().dim(0)));
  const Shape shape = h.shape();
  const int n = shape[0];
  const int c = shape.back();
  const int len = static_cast<int>(h.value().size() / n / c);
  Var seq = ag::reshape(h, {n, len, c});
  Var x = norm(seq);
  Var attn = ag::attention(to_q(x), to_k(context), to_v(context), heads, probs);
  return ag::add(h, ag::reshape(to_out(attn), shape));
}

void CrossAttention::params(const std::string& prefix, ParamList& out) const {
  norm.params(prefix + ".norm", out);
  to_q.params(prefix + ".q", out);
  to_k.params(prefix + ".k", out);
  to_v.params(prefix + ".v", out);
  to_out.params(prefix + ".out", out);
}

Tensor sinusoidal_embedding(const std::vector<int>& timesteps, int dim) {
  const int half = dim / 2;
  Tensor out({static_cast<int>(timesteps.size()), dim});
  for (std::size_t i = 0; i < timesteps.size(); ++i)
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * j / half);
      const double arg = timesteps[i] * freq;
      out[i * dim + j] = std::cos(arg);
      out[i * dim + half + j] = std::sin(arg);
    }
  return out;
}

TimeEmbedding::TimeEmbedding(int base, int embed_dim, Rng& rng)
    : base_dim(base), fc1(base, embed_dim, rng), fc2(embed_dim, embed_dim, rng) {}

Var TimeEmbedding::operator()(const std::vector<int>& timesteps) const {
  Var e = Var::constant(sinusoidal_embedding(timesteps, base_dim));
  return fc2(ag::silu(fc1(e)));
}

void TimeEmbedding::params(const std::string& prefix, ParamList& out) const {
  fc1.params(prefix + ".fc1", out);
  fc2.params(prefix + ".fc2", out);
}

}  // namespace vtryon::nn
