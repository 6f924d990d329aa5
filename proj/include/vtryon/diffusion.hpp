// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Noise schedules, the forward corruption, the epsilon-prediction loss,
// classifier-free guidance and the reverse-process samplers shared by both
// denoising stages. Timesteps are 1-based; alpha_bar(0) is defined as 1.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vtryon/tensor.hpp"

namespace vtryon::diffusion {

enum class ScheduleKind { kLinear };

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double beta(int t) const { return betas[t - 1]; }
  double alpha(int t) const { return alphas[t - 1]; }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars[t - 1]; }
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end,
                            ScheduleKind kind = ScheduleKind::kLinear);
// Desk-scale schedule: the betas are stretched so that alpha_bar_T ~ 4e-5 with
// only 200 steps.
struct ScheduleConfig {
  int T = 200;
  double beta_start = 5e-4;
  double beta_end = 0.1;
};
NoiseSchedule make_schedule(const ScheduleConfig& cfg);

// Builds alphas and cumulative products from explicit betas in (0, 1).
NoiseSchedule schedule_from_betas(std::vector<double> betas);

// sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps.
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Mean squared error over every element.
double denoising_loss(const Tensor& eps_pred, const Tensor& eps);

// (1 - w) * uncond + w * cond, i.e. uncond + w * (cond - uncond).
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double w);

// Ancestral DDPM posterior step t -> t-1. `noise` is ignored at t == 1.
Tensor ddpm_step(const Tensor& z_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched,
                 const Tensor& noise);

// Generalized DDIM step t -> t_prev (t_prev may be 0). eta = 0 is deterministic
// and `noise` is then unused (may be empty).
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                 const NoiseSchedule& sched, double eta, const Tensor& noise);

enum class SamplerKind { kDdpm, kDdim, kUniPC };

SamplerKind parse_sampler_kind(const std::string& name);
std::string to_string(SamplerKind kind);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kUniPC;
  int num_steps = 50;
  double guidance_scale = 7.5;
  double eta = 0.0;
  std::uint64_t seed = 0;
  // UniPC predictor order: 1 (reduces to DDIM) or 2.
  int unipc_order = 2;
};

void validate(const SamplerConfig& cfg, const NoiseSchedule& sched);

// Uniformly spaced, strictly decreasing timesteps: floor(i*T/n) for i = n..1.
std::vector<int> timestep_sequence(int T, int num_steps);

enum class Branch { kConditional, kUnconditional };

// Maps (z_t, t, branch) to a noise prediction with z_t's shape. The
// conditioning bundle lives inside the callable.
using Denoiser = std::function<Tensor(const Tensor& z_t, int t, Branch branch)>;

// Guided noise prediction for one step; the unconditional branch is skipped
// when guidance_scale == 1.
Tensor guided_eps(const Denoiser& model, const Tensor& z_t, int t, double guidance_scale);

// Runs the configured sampler from z_T. Step noise (ddpm, ddim with eta > 0)
// is drawn from a generator seeded with cfg.seed: one tensor per step.
Tensor sample(const Denoiser& model, const Tensor& z_T, const SamplerConfig& cfg,
              const NoiseSchedule& sched);

}  // namespace vtryon::diffusion
