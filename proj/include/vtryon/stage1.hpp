// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Cross-attention warping UNet: denoises the latent of the garment as worn,
// conditioned on person, cloth and mask tokens.

#pragma once

#include <vector>

#include "vtryon/autoencoder.hpp"
#include "vtryon/conditioning.hpp"
#include "vtryon/diffusion.hpp"
#include "vtryon/synthdata.hpp"
#include "vtryon/training.hpp"
#include "vtryon/unet.hpp"

namespace vtryon::stage1 {

struct CawConfig {
  unet::UnetConfig unet;  // context_dim must equal projection.token_dim
  cond::ProjectionConfig projection;
  // false feeds raw encoder features as tokens (projection bypass).
  bool use_projection = true;
  // Feature-grid positions per source; token count per source without projection.
  int grid_tokens = 48;
};

void validate(const CawConfig& cfg);

class CawModel {
 public:
  CawModel() = default;
  CawModel(const CawConfig& cfg, std::uint64_t seed);

  const CawConfig& config() const { return cfg_; }
  int tokens_per_source() const;

  // Features [N, L, fc] per source -> concatenated tokens [N, 3 * n, d].
  ag::Var tokens(const ag::Var& f_person, const ag::Var& f_cloth, const ag::Var& f_mask) const;
  // Learned unconditional sequence broadcast to a batch of n.
  ag::Var null_tokens(int n) const { return ag::expand_batch(null_, n); }
  const ag::Var& null_sequence() const { return null_; }

  // Noise prediction for z_t [N, h, w, c].
  ag::Var forward(const ag::Var& z_t, const std::vector<int>& timesteps, const ag::Var& tokens,
                  std::vector<Tensor>* probs = nullptr) const;

  unet::Unet& unet() { return unet_; }
  cond::Projection& projection() { return proj_; }
  nn::ParamList params() const;

 private:
  CawConfig cfg_;
  unet::Unet unet_;
  cond::Projection proj_;
  ag::Var null_;
};

// Cached training inputs: the frozen autoencoder and encoder make these fixed.
struct Example {
  std::string id;
  Tensor z0;                      // scaled mean latent of warped_gt
  Tensor f_person, f_cloth, f_mask;  // [L, fc]
};

std::vector<Example> prepare(const std::vector<synth::Sample>& samples, const vae::Autoencoder& vae,
                             const cond::FrozenEncoder& encoder);

// Per-step draws, exposed for tests.
struct StepDraw {
  std::vector<int> index;
  std::vector<int> timesteps;
  Tensor eps;
  std::vector<bool> drop;
  Tensor eps_pred;
};

// Loss of one step: batch, t ~ U[1, T], eps ~ N(0, I), per-item token dropout.
ag::Var step_loss(const CawModel& model, const std::vector<Example>& data,
                  const diffusion::NoiseSchedule& sched, const train::TrainConfig& cfg, Rng& rng,
                  StepDraw* draw = nullptr);

void train(CawModel& model, const std::vector<Example>& data, const diffusion::NoiseSchedule& sched,
           const train::TrainConfig& cfg, train::AdamW& opt, train::LoopState& state,
           const train::LoopHooks& hooks = {});
std::vector<train::LossRow> train(CawModel& model, const std::vector<Example>& data,
                                  const diffusion::NoiseSchedule& sched,
                                  const train::TrainConfig& cfg);

// Samples the warped garment for (H, W, *) inputs or (N, H, W, *) batches and
// decodes it. The initial latent comes from `seed`.
Tensor warp_garment(const CawModel& model, const vae::Autoencoder& vae,
                    const cond::FrozenEncoder& encoder, const diffusion::NoiseSchedule& sched,
                    const Tensor& person, const Tensor& cloth, const Tensor& mask,
                    const diffusion::SamplerConfig& sampler, std::uint64_t seed);

// Stacks the rows of `items` selected by `idx`.
Tensor gather(const std::vector<const Tensor*>& items, const std::vector<int>& idx);

}  // namespace vtryon::stage1
