// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/unet.hpp"

#include <algorithm>

#include "vtryon/error.hpp"

namespace vtryon::unet {

namespace {

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

int heads_for(int channels, int head_channels) { return std::max(1, channels / head_channels); }

}  // namespace

void validate(const UnetConfig& c) {
  require(c.in_channels >= 1 && c.out_channels >= 1, ErrorKind::kInvalidConfig,
          "unet channel counts must be >= 1");
  require(c.base_width >= 1 && !c.channel_mults.empty(), ErrorKind::kInvalidConfig,
          "unet needs a base width and at least one level");
  for (int m : c.channel_mults) require(m >= 1, ErrorKind::kInvalidConfig, "channel multiplier < 1");
  require(c.num_res_blocks >= 1, ErrorKind::kInvalidConfig, "num_res_blocks must be >= 1");
  for (int l : c.attention_levels)
    require(l >= 0 && l < static_cast<int>(c.channel_mults.size()), ErrorKind::kInvalidConfig,
            "attention level " + std::to_string(l) + " out of range");
  require(c.time_embed_dim >= 2 && c.time_embed_dim % 2 == 0, ErrorKind::kInvalidConfig,
          "time_embed_dim must be even and >= 2");
  require(c.context_dim >= 1 && c.head_channels >= 1 && c.max_groups >= 1,
          ErrorKind::kInvalidConfig, "unet context/head/group sizes must be >= 1");
  for (int m : c.channel_mults) {
    const int ch = m * c.base_width;
    require(ch % heads_for(ch, c.head_channels) == 0, ErrorKind::kDivisibility,
            "level width " + std::to_string(ch) + " not divisible by its head count");
  }
}

Unet::Unet(const UnetConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate(cfg_);
  const int levels = static_cast<int>(cfg_.channel_mults.size());
  const int td = cfg_.time_embed_dim;
  const int g = cfg_.max_groups;
  temb_ = nn::TimeEmbedding(cfg_.base_width, td, rng);
  conv_in_ = nn::Conv2d(cfg_.in_channels, cfg_.base_width, 3, 1, rng);

  auto make_stage = [&](int in, int out, int level) {
    Stage s;
    s.res = nn::ResBlock(in, out, td, g, rng);
    s.has_attn = contains(cfg_.attention_levels, level);
    if (s.has_attn)
      s.attn = nn::CrossAttention(out, cfg_.context_dim, heads_for(out, cfg_.head_channels), rng);
    return s;
  };

  std::vector<int> skip_channels{cfg_.base_width};
  int ch = cfg_.base_width;
  down_.resize(levels);
  for (int l = 0; l < levels; ++l) {
    const int out = cfg_.channel_mults[l] * cfg_.base_width;
    for (int r = 0; r < cfg_.num_res_blocks; ++r) {
      down_[l].push_back(make_stage(ch, out, l));
      ch = out;
      skip_channels.push_back(ch);
    }
    if (l + 1 < levels) {
      downsample_.emplace_back(ch, ch, 3, 2, rng);
      skip_channels.push_back(ch);
    }
  }

  mid1_ = nn::ResBlock(ch, ch, td, g, rng);
  mid_attn_ = nn::CrossAttention(ch, cfg_.context_dim, heads_for(ch, cfg_.head_channels), rng);
  mid2_ = nn::ResBlock(ch, ch, td, g, rng);

  up_.resize(levels);
  for (int l = levels - 1; l >= 0; --l) {
    const int out = cfg_.channel_mults[l] * cfg_.base_width;
    for (int r = 0; r <= cfg_.num_res_blocks; ++r) {
      const int skip = skip_channels.back();
      skip_channels.pop_back();
      up_[l].push_back(make_stage(ch + skip, out, l));
      ch = out;
    }
    if (l > 0) upsample_.emplace_back(ch, ch, 3, 1, rng);
  }
  norm_out_ = nn::GroupNorm(ch, nn::pick_groups(ch, g));
  conv_out_ = nn::Conv2d(ch, cfg_.out_channels, 3, 1, rng);
}

ag::Var Unet::operator()(const ag::Var& x, const std::vector<int>& timesteps,
                         const ag::Var& context, std::vector<Tensor>* probs) const {
  const Tensor& xv = x.value();
  require(xv.rank() == 4 && xv.dim(3) == cfg_.in_channels, ErrorKind::kShapeMismatch,
          "unet input " + shape_str(x.shape()) + " does not have " +
              std::to_string(cfg_.in_channels) + " channels");
  const int levels = static_cast<int>(cfg_.channel_mults.size());
  const int div = 1 << (levels - 1);
  require(xv.dim(1) % div == 0 && xv.dim(2) % div == 0, ErrorKind::kDivisibility,
          "unet input " + shape_str(x.shape()) + " not divisible by " + std::to_string(div));
  require(static_cast<int>(timesteps.size()) == xv.dim(0), ErrorKind::kShapeMismatch,
          "one timestep per batch item required");

  auto attend = [&](const nn::CrossAttention& a, const ag::Var& h) {
    if (!probs) return a(h, context);
    Tensor p;
    ag::Var out = a(h, context, &p);
    probs->push_back(std::move(p));
    return out;
  };

  const ag::Var temb = temb_(timesteps);
  ag::Var h = conv_in_(x);
  std::vector<ag::Var> skips{h};
  for (int l = 0; l < levels; ++l) {
    for (const auto& s : down_[l]) {
      h = s.res(h, temb);
      if (s.has_attn) h = attend(s.attn, h);
      skips.push_back(h);
    }
    if (l + 1 < levels) {
      h = downsample_[l](h);
      skips.push_back(h);
    }
  }
  h = mid2_(attend(mid_attn_, mid1_(h, temb)), temb);
  int up_index = 0;
  for (int l = levels - 1; l >= 0; --l) {
    for (const auto& s : up_[l]) {
      const ag::Var parts[] = {h, skips.back()};
      skips.pop_back();
      h = s.res(ag::concat(parts, 3), temb);
      if (s.has_attn) h = attend(s.attn, h);
    }
    if (l > 0) h = upsample_[up_index++](ag::upsample_nearest2x(h));
  }
  return conv_out_(ag::silu(norm_out_(h)));
}

std::vector<nn::CrossAttention*> Unet::attention_layers() {
  std::vector<nn::CrossAttention*> out;
  for (auto& level : down_)
    for (auto& s : level)
      if (s.has_attn) out.push_back(&s.attn);
  out.push_back(&mid_attn_);
  for (auto& level : up_)
    for (auto& s : level)
      if (s.has_attn) out.push_back(&s.attn);
  return out;
}

void Unet::params(const std::string& prefix, nn::ParamList& out) const {
  temb_.params(prefix + ".temb", out);
  conv_in_.params(prefix + ".conv_in", out);
  for (std::size_t l = 0; l < down_.size(); ++l) {
    for (std::size_t r = 0; r < down_[l].size(); ++r) {
      const std::string p = prefix + ".down" + std::to_string(l) + "." + std::to_string(r);
      down_[l][r].res.params(p + ".res", out);
      if (down_[l][r].has_attn) down_[l][r].attn.params(p + ".attn", out);
    }
    if (l < downsample_.size()) downsample_[l].params(prefix + ".downsample" + std::to_string(l), out);
  }
  mid1_.params(prefix + ".mid1", out);
  mid_attn_.params(prefix + ".mid_attn", out);
  mid2_.params(prefix + ".mid2", out);
  for (std::size_t l = up_.size(); l-- > 0;) {
    for (std::size_t r = 0; r < up_[l].size(); ++r) {
      const std::string p = prefix + ".up" + std::to_string(l) + "." + std::to_string(r);
      up_[l][r].res.params(p + ".res", out);
      if (up_[l][r].has_attn) up_[l][r].attn.params(p + ".attn", out);
    }
  }
  for (std::size_t i = 0; i < upsample_.size(); ++i)
    upsample_[i].params(prefix + ".upsample" + std::to_string(i), out);
  norm_out_.params(prefix + ".norm_out", out);
  conv_out_.params(prefix + ".conv_out", out);
}

}  // namespace vtryon::unet
