// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Convolutional KL autoencoder mapping (H, W, 3) images in [-1, 1] to
// (H/f, W/f, c) latents.

#pragma once

#include <vector>

#include "vtryon/nn.hpp"
#include "vtryon/training.hpp"

namespace vtryon::vae {

struct AutoencoderConfig {
  int downsample_factor = 4;  // 4 or 8
  int latent_channels = 4;
  int base_width = 32;
  double kl_weight = 1e-6;
  // Per-channel multiplier applied after encoding (divided out before decoding).
  std::vector<double> latent_scale{1.0, 1.0, 1.0, 1.0};
};

void validate(const AutoencoderConfig& cfg);

inline constexpr double kLogVarMin = -30.0;
inline constexpr double kLogVarMax = 20.0;

enum class EncodeMode { kSample, kMean };

struct LatentStats {
  ag::Var mean;     // [N, h, w, c], unscaled
  ag::Var log_var;  // clamped to [kLogVarMin, kLogVarMax]
};

class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(const AutoencoderConfig& cfg, std::uint64_t seed);

  const AutoencoderConfig& config() const { return cfg_; }
  void set_latent_scale(std::vector<double> scale);

  // Posterior parameters for a batch [N, H, W, 3].
  LatentStats posterior(const ag::Var& x) const;
  // Decoder on unscaled latents [N, h, w, c] -> [N, H, W, 3] in [-1, 1].
  ag::Var decode_raw(const ag::Var& z) const;

  // Scaled latents of images (H, W, 3) or batches (N, H, W, 3). Sample mode
  // draws from the posterior with a generator seeded by `seed`.
  Tensor encode(const Tensor& x, EncodeMode mode, std::uint64_t seed = 0) const;
  // Inverse of the scaling followed by the decoder; accepts (h, w, c) or (N, h, w, c).
  Tensor decode(const Tensor& z) const;

  // Reconstruction MSE + kl_weight * KL for a batch, sampling with `rng`.
  ag::Var loss(const Tensor& x, Rng& rng) const;

  nn::ParamList params() const;

 private:
  void check_image(const Tensor& x) const;

  AutoencoderConfig cfg_;
  std::vector<int> widths_;
  nn::Conv2d enc_in_;
  std::vector<nn::Conv2d> enc_down_;
  std::vector<nn::ResBlock> enc_res_;
  nn::GroupNorm enc_norm_;
  nn::Conv2d enc_out_;
  nn::Conv2d dec_in_;
  nn::ResBlock dec_mid_;
  std::vector<nn::Conv2d> dec_up_;
  std::vector<nn::ResBlock> dec_res_;
  nn::GroupNorm dec_norm_;
  nn::Conv2d dec_out_;
};

// Trains with AdamW on random minibatches drawn from `images` (each (H, W, 3)).
// Throws on an empty dataset or a non-finite loss.
std::vector<train::LossRow> train_vae(Autoencoder& model, const std::vector<Tensor>& images,
                                      const train::TrainConfig& cfg);

// 1 / std of each latent channel of the unscaled posterior means.
std::vector<double> fit_latent_scale(const Autoencoder& model, const std::vector<Tensor>& images);

// Stacks (H, W, C) tensors selected by `idx` into a batch.
Tensor gather_batch(const std::vector<Tensor>& items, const std::vector<int>& idx);

}  // namespace vtryon::vae
