// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Fusion UNet: denoises the try-on latent from channel-concatenated
// condition latents plus warped-garment tokens.

#pragma once

#include <vector>

#include "vtryon/stage1.hpp"

namespace vtryon::stage2 {

// Channel order after z_t follows the order of FusionConfig::concat_sources.
enum class ConcatSource { kPerson, kCloth, kWarpedCloth };
std::string to_string(ConcatSource s);
ConcatSource parse_concat_source(const std::string& s);

enum class WarpedSource { kGroundTruth, kStage1Model };
std::string to_string(WarpedSource s);
WarpedSource parse_warped_source(const std::string& s);

struct FusionConfig {
  int latent_channels = 4;
  // unet.in_channels is derived: latent_channels * (1 + concat_sources.size()).
  unet::UnetConfig unet;
  cond::ProjectionConfig projection;
  std::vector<ConcatSource> concat_sources{ConcatSource::kPerson, ConcatSource::kCloth,
                                           ConcatSource::kWarpedCloth};
  bool use_projection = true;
  // Also cross-attend to person and cloth tokens (appended after the warped ones).
  bool person_cloth_tokens = false;
  int grid_tokens = 48;
};

void validate(const FusionConfig& cfg);
int input_channels(const FusionConfig& cfg);

// Condition latents; entries not listed in concat_sources may be undefined.
struct CondLatents {
  ag::Var person, cloth, warped;
};

class FusionModel {
 public:
  FusionModel() = default;
  FusionModel(const FusionConfig& cfg, std::uint64_t seed);

  const FusionConfig& config() const { return cfg_; }
  int tokens_per_source() const;
  int num_tokens() const;

  // Warped-garment features [N, L, fc] (plus person/cloth when enabled).
  ag::Var tokens(const ag::Var& f_warped, const ag::Var& f_person = {},
                 const ag::Var& f_cloth = {}) const;
  ag::Var null_tokens(int n) const { return ag::expand_batch(null_, n); }
  const ag::Var& null_sequence() const { return null_; }

  // Concatenates [z_t; sources...] on channels and predicts the noise.
  ag::Var forward(const ag::Var& z_t, const CondLatents& cond, const std::vector<int>& timesteps,
                  const ag::Var& tokens) const;

  unet::Unet& unet() { return unet_; }
  nn::ParamList params() const;

 private:
  FusionConfig cfg_;
  unet::Unet unet_;
  cond::Projection proj_;
  ag::Var null_;
};

struct Example {
  std::string id;
  Tensor z0;                  // scaled mean latent of tryon_gt
  Tensor z_person, z_cloth, z_warped;
  Tensor f_warped, f_person, f_cloth;  // [L, fc]
};

// Builds cached examples. With kStage1Model the warped garment is sampled by
// `warper` (required) with `sampler` and per-sample seeds derived from `seed`.
struct WarpSourceOptions {
  WarpedSource source = WarpedSource::kGroundTruth;
  const stage1::CawModel* warper = nullptr;
  diffusion::NoiseSchedule sched;
  diffusion::SamplerConfig sampler;
  std::uint64_t seed = 0;
  int batch = 8;
};

std::vector<Example> prepare(const std::vector<synth::Sample>& samples, const vae::Autoencoder& vae,
                             const cond::FrozenEncoder& encoder, const WarpSourceOptions& opts = {});

struct StepDraw {
  std::vector<int> index;
  std::vector<int> timesteps;
  Tensor eps;
  std::vector<bool> drop;
  Tensor eps_pred;
};

ag::Var step_loss(const FusionModel& model, const std::vector<Example>& data,
                  const diffusion::NoiseSchedule& sched, const train::TrainConfig& cfg, Rng& rng,
                  StepDraw* draw = nullptr);

void train(FusionModel& model, const std::vector<Example>& data,
           const diffusion::NoiseSchedule& sched, const train::TrainConfig& cfg,
           train::AdamW& opt, train::LoopState& state, const train::LoopHooks& hooks = {});
std::vector<train::LossRow> train(FusionModel& model, const std::vector<Example>& data,
                                  const diffusion::NoiseSchedule& sched,
                                  const train::TrainConfig& cfg);

// Second-stage sampling given an already warped garment image.
Tensor fuse(const FusionModel& model, const vae::Autoencoder& vae,
            const cond::FrozenEncoder& encoder, const diffusion::NoiseSchedule& sched,
            const Tensor& person, const Tensor& cloth, const Tensor& warped,
            const diffusion::SamplerConfig& sampler, std::uint64_t seed);

struct TryonResult {
  Tensor warped;
  Tensor image;
};

// Full pipeline: warp_garment, then fuse. Accepts single images or batches.
TryonResult tryon(const stage1::CawModel& warper, const FusionModel& fusion,
                  const vae::Autoencoder& vae, const cond::FrozenEncoder& encoder,
                  const diffusion::NoiseSchedule& sched, const Tensor& person, const Tensor& cloth,
                  const Tensor& mask, const diffusion::SamplerConfig& sampler, std::uint64_t seed);

}  // namespace vtryon::stage2
