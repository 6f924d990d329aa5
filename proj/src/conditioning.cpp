// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/conditioning.hpp"

#include <cmath>

#include "vtryon/error.hpp"

namespace vtryon::cond {

std::string to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::kPerson: return "person";
    case SourceTag::kCloth: return "cloth";
    case SourceTag::kMask: return "mask";
    case SourceTag::kWarpedCloth: return "warped_cloth";
    case SourceTag::kNull: return "null";
  }
  return "?";
}

void validate(const EncoderConfig& cfg) {
  require(!cfg.widths.empty() && cfg.widths.size() <= 4, ErrorKind::kInvalidConfig,
          "encoder needs 1 to 4 layers");
  for (int w : cfg.widths) require(w >= 1, ErrorKind::kInvalidConfig, "encoder width must be >= 1");
}

FrozenEncoder::FrozenEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  Rng rng(cfg_.seed);
  int in = 3;
  for (int w : cfg_.widths) {
    nn::Conv2d conv(in, w, 3, 2, rng);
    // Variance-preserving normal init, frozen.
    const double sd = std::sqrt(2.0 / (9.0 * in));
    Tensor wt = rng.normal_tensor(conv.w.shape());
    for (std::size_t i = 0; i < wt.size(); ++i) wt[i] *= sd;
    conv.w = ag::Var::constant(std::move(wt));
    conv.b = ag::Var::constant(Tensor(conv.b.shape(), 0.0));
    convs_.push_back(conv);
    in = w;
  }
}

std::vector<ag::Var> FrozenEncoder::layers(const ag::Var& x) const {
  require(x.value().rank() == 4 && x.value().dim(3) == 3, ErrorKind::kShapeMismatch,
          "encoder expects (N, H, W, 3), got " + shape_str(x.shape()));
  require(x.value().dim(1) % stride() == 0 && x.value().dim(2) % stride() == 0,
          ErrorKind::kDivisibility,
          "encoder input " + shape_str(x.shape()) + " not divisible by stride " +
              std::to_string(stride()));
  std::vector<ag::Var> out;
  ag::Var h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i](h);
    if (i + 1 < convs_.size()) h = ag::silu(h);
    out.push_back(h);
  }
  return out;
}

ag::Var FrozenEncoder::features(const ag::Var& x) const { return layers(x).back(); }

Tensor to_rgb(const Tensor& image) {
  if (image.dim(-1) != 1) return image;
  Shape s = image.shape();
  s.back() = 3;
  Tensor out(s);
  for (std::size_t i = 0; i < image.size(); ++i)
    for (int c = 0; c < 3; ++c) out[3 * i + c] = image[i];
  return out;
}

Tensor FrozenEncoder::features(const Tensor& image) const {
  require(image.rank() == 3 || image.rank() == 4, ErrorKind::kShapeMismatch,
          "encoder expects (H, W, C) or (N, H, W, C), got " + shape_str(image.shape()));
  require(image.dim(-1) == 1 || image.dim(-1) == 3, ErrorKind::kShapeMismatch,
          "encoder input must have 1 or 3 channels");
  Tensor x = to_rgb(image);
  const bool single = x.rank() == 3;
  if (single) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  ag::NoGradGuard guard;
  Tensor f = features(ag::Var::constant(std::move(x))).value();
  if (single) return f.reshaped({f.dim(1), f.dim(2), f.dim(3)});
  return f;
}

nn::ParamList FrozenEncoder::params() const {
  nn::ParamList out;
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].params("encoder." + std::to_string(i), out);
  return out;
}

std::uint64_t FrozenEncoder::weights_hash() const { return nn::hash_params(params()); }

Tensor flatten_grid(const Tensor& grid) {
  require(grid.rank() == 3 || grid.rank() == 4, ErrorKind::kShapeMismatch,
          "feature grid must be (gh, gw, fc) or (N, gh, gw, fc)");
  if (grid.rank() == 3) return grid.reshaped({1, grid.dim(0) * grid.dim(1), grid.dim(2)});
  return grid.reshaped({grid.dim(0), grid.dim(1) * grid.dim(2), grid.dim(3)});
}

void validate(const ProjectionConfig& c) {
  require(c.num_queries >= 1 && c.token_dim >= 1 && c.feature_dim >= 1 && c.ff_mult >= 1,
          ErrorKind::kInvalidConfig, "projection sizes must be >= 1");
  require(c.heads >= 1 && c.token_dim % c.heads == 0, ErrorKind::kDivisibility,
          "token_dim must be divisible by heads");
}

Projection::Projection(const ProjectionConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate(cfg_);
  const int d = cfg_.token_dim;
  Tensor q = rng.normal_tensor({cfg_.num_queries, d});
  for (std::size_t i = 0; i < q.size(); ++i) q[i] *= 1.0 / std::sqrt(static_cast<double>(d));
  queries = ag::Var::parameter(std::move(q));
  to_q = nn::Linear(d, d, rng, false);
  to_k = nn::Linear(cfg_.feature_dim, d, rng, false);
  to_v = nn::Linear(cfg_.feature_dim, d, rng, false);
  attn_out = nn::Linear(d, d, rng);
  ff_norm = nn::LayerNorm(d);
  ff1 = nn::Linear(d, cfg_.ff_mult * d, rng);
  ff2 = nn::Linear(cfg_.ff_mult * d, d, rng);
  out = nn::Linear(d, d, rng);
  for (int t = 0; t < kNumSourceTags; ++t) {
    Tensor s = rng.normal_tensor({d});
    for (std::size_t i = 0; i < s.size(); ++i) s[i] *= 0.02;
    segments.push_back(ag::Var::parameter(std::move(s)));
  }
}

ag::Var Projection::operator()(const ag::Var& features, SourceTag tag, Tensor* probs) const {
  require(features.value().rank() == 3 && features.value().dim(2) == cfg_.feature_dim,
          ErrorKind::kShapeMismatch,
          "projection expects [N, L, " + std::to_string(cfg_.feature_dim) + "] features, got " +
              shape_str(features.shape()));
  const int n = features.value().dim(0);
  ag::Var h = ag::expand_batch(queries, n);
  const ag::Var a = ag::attention(to_q(h), to_k(features), to_v(features), cfg_.heads, probs);
  h = ag::add(h, attn_out(a));
  h = ag::add(h, ff2(ag::silu(ff1(ff_norm(h)))));
  return ag::add_bias(out(h), segments[static_cast<int>(tag)]);
}

void Projection::zero_output() { out.zero(); }

void Projection::params(const std::string& prefix, nn::ParamList& o) const {
  o.push_back({prefix + ".queries", queries});
  to_q.params(prefix + ".to_q", o);
  to_k.params(prefix + ".to_k", o);
  to_v.params(prefix + ".to_v", o);
  attn_out.params(prefix + ".attn_out", o);
  ff_norm.params(prefix + ".ff_norm", o);
  ff1.params(prefix + ".ff1", o);
  ff2.params(prefix + ".ff2", o);
  out.params(prefix + ".out", o);
  for (int t = 0; t < kNumSourceTags; ++t)
    o.push_back({prefix + ".segment." + to_string(static_cast<SourceTag>(t)), segments[t]});
}

ag::Var raw_tokens(const ag::Var& features, int token_dim) {
  require(features.value().rank() == 3 && features.value().dim(2) == token_dim,
          ErrorKind::kShapeMismatch,
          "raw tokens need feature width " + std::to_string(token_dim) + ", got " +
              shape_str(features.shape()));
  return features;
}

ag::Var concat_tokens(const std::vector<ag::Var>& parts) {
  require(!parts.empty(), ErrorKind::kShapeMismatch, "concat_tokens of zero parts");
  const Shape& s0 = parts.front().shape();
  for (const auto& p : parts)
    require(p.value().rank() == 3 && p.value().dim(0) == s0[0] && p.value().dim(2) == s0[2],
            ErrorKind::kShapeMismatch,
            "token part " + shape_str(p.shape()) + " incompatible with " + shape_str(s0));
  if (parts.size() == 1) return parts.front();
  return ag::concat(parts, 1);
}

}  // namespace vtryon::cond
