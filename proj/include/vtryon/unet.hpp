// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Time-conditioned UNet with cross-attention on a token context, shared by
// the warping and fusion stages.

#pragma once

#include <vector>

#include "vtryon/nn.hpp"

namespace vtryon::unet {

struct UnetConfig {
  int in_channels = 4;
  int out_channels = 4;
  int base_width = 32;
  std::vector<int> channel_mults{1, 2, 4};
  int num_res_blocks = 1;
  // Level indices (0 = full latent resolution) that get cross-attention. The
  // middle block always has one.
  std::vector<int> attention_levels{1, 2};
  int time_embed_dim = 128;
  int context_dim = 64;
  int head_channels = 32;
  int max_groups = 8;
};

void validate(const UnetConfig& cfg);

class Unet {
 public:
  Unet() = default;
  Unet(const UnetConfig& cfg, Rng& rng);

  const UnetConfig& config() const { return cfg_; }
  // x [N, h, w, in_channels] with h, w divisible by 2^(levels-1);
  // context [N, L, context_dim]. `probs`, when given, collects the softmax
  // weights of every attention layer in forward order.
  ag::Var operator()(const ag::Var& x, const std::vector<int>& timesteps, const ag::Var& context,
                     std::vector<Tensor>* probs = nullptr) const;

  nn::Conv2d& input_conv() { return conv_in_; }
  const nn::Conv2d& input_conv() const { return conv_in_; }
  std::vector<nn::CrossAttention*> attention_layers();
  void params(const std::string& prefix, nn::ParamList& out) const;

 private:
  struct Stage {
    nn::ResBlock res;
    bool has_attn = false;
    nn::CrossAttention attn;
  };

  UnetConfig cfg_;
  nn::TimeEmbedding temb_;
  nn::Conv2d conv_in_;
  std::vector<std::vector<Stage>> down_;
  std::vector<nn::Conv2d> downsample_;
  nn::ResBlock mid1_, mid2_;
  nn::CrossAttention mid_attn_;
  std::vector<std::vector<Stage>> up_;
  std::vector<nn::Conv2d> upsample_;
  nn::GroupNorm norm_out_;
  nn::Conv2d conv_out_;
};

}  // namespace vtryon::unet
