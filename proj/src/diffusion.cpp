// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/diffusion.hpp"

#include <cmath>
#include <optional>

#include "vtryon/autograd.hpp"
#include "vtryon/error.hpp"
#include "vtryon/rng.hpp"

namespace vtryon::diffusion {

namespace {

void check_timestep(int t, const NoiseSchedule& sched) {
  require(t >= 1 && t <= sched.T, ErrorKind::kTimestepOutOfRange,
          "timestep " + std::to_string(t) + " outside [1, " + std::to_string(sched.T) + "]");
}

double log_snr(double alpha_bar) { return 0.5 * std::log(alpha_bar / (1.0 - alpha_bar)); }

}  // namespace

NoiseSchedule make_schedule(const ScheduleConfig& cfg) {
  return make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
}

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
  require(!betas.empty(), ErrorKind::kInvalidRange, "schedule needs at least one step");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.alphas.resize(betas.size());
  s.alpha_bars.resize(betas.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    require(betas[i] > 0.0 && betas[i] < 1.0, ErrorKind::kInvalidRange,
            "beta outside (0, 1) at step " + std::to_string(i + 1));
    s.alphas[i] = 1.0 - betas[i];
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  s.betas = std::move(betas);
  return s;
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  require(T >= 1, ErrorKind::kInvalidRange, "T must be >= 1, got " + std::to_string(T));
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorKind::kInvalidRange,
          "need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(T);
  switch (kind) {
    case ScheduleKind::kLinear:
      for (int i = 0; i < T; ++i)
        betas[i] = T == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * i / static_cast<double>(T - 1);
      break;
  }
  return schedule_from_betas(std::move(betas));
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  require_same_shape(z0, eps, "forward_diffuse");
  check_timestep(t, sched);
  const double a = std::sqrt(sched.alpha_bar(t));
  const double s = std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + s * eps[i];
  return out;
}

double denoising_loss(const Tensor& eps_pred, const Tensor& eps) {
  require_same_shape(eps_pred, eps, "denoising_loss");
  return ag::mean_squared_error(eps_pred.span(), eps.span());
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double w) {
  require_same_shape(eps_uncond, eps_cond, "cfg_combine");
  require(w >= 0.0, ErrorKind::kInvalidRange, "guidance scale must be >= 0");
  Tensor out(eps_cond.shape());
  const double wu = 1.0 - w;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wu * eps_uncond[i] + w * eps_cond[i];
  return out;
}

Tensor ddpm_step(const Tensor& z_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched,
                 const Tensor& noise) {
  check_timestep(t, sched);
  require_same_shape(z_t, eps_pred, "ddpm_step");
  const double beta = sched.beta(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double eps_coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = inv_sqrt_alpha * (z_t[i] - eps_coef * eps_pred[i]);
  if (t > 1) {
    require_same_shape(z_t, noise, "ddpm_step noise");
    const double sigma =
        std::sqrt(beta * (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t)));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * noise[i];
  }
  return out;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                 const NoiseSchedule& sched, double eta, const Tensor& noise) {
  require(t > t_prev && t_prev >= 0, ErrorKind::kOrdering,
          "ddim_step needs t > t_prev >= 0, got t=" + std::to_string(t) +
              " t_prev=" + std::to_string(t_prev));
  check_timestep(t, sched);
  require(eta >= 0.0 && eta <= 1.0, ErrorKind::kInvalidRange, "eta outside [0, 1]");
  require_same_shape(z_t, eps_pred, "ddim_step");
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  const double sqrt_ab = std::sqrt(ab);
  const double sqrt_1m_ab = std::sqrt(1.0 - ab);
  const double sigma =
      eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  const double sqrt_ab_prev = std::sqrt(ab_prev);
  const bool stochastic = sigma > 0.0;
  if (stochastic) require_same_shape(z_t, noise, "ddim_step noise");
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z0_hat = (z_t[i] - sqrt_1m_ab * eps_pred[i]) / sqrt_ab;
    out[i] = sqrt_ab_prev * z0_hat + dir * eps_pred[i];
    if (stochastic) out[i] += sigma * noise[i];
  }
  return out;
}

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "ddpm") return SamplerKind::kDdpm;
  if (name == "ddim") return SamplerKind::kDdim;
  if (name == "unipc") return SamplerKind::kUniPC;
  raise(ErrorKind::kInvalidConfig, "unknown sampler kind '" + name + "'");
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kDdpm: return "ddpm";
    case SamplerKind::kDdim: return "ddim";
    case SamplerKind::kUniPC: return "unipc";
  }
  return "unknown";
}

void validate(const SamplerConfig& cfg, const NoiseSchedule& sched) {
  require(cfg.num_steps >= 1 && cfg.num_steps <= sched.T, ErrorKind::kInvalidConfig,
          "num_steps must lie in [1, T]");
  require(cfg.guidance_scale >= 0.0, ErrorKind::kInvalidConfig, "guidance_scale must be >= 0");
  require(cfg.eta >= 0.0 && cfg.eta <= 1.0, ErrorKind::kInvalidConfig, "eta must lie in [0, 1]");
  require(cfg.unipc_order == 1 || cfg.unipc_order == 2, ErrorKind::kInvalidConfig,
          "unipc_order must be 1 or 2");
}

std::vector<int> timestep_sequence(int T, int num_steps) {
  require(num_steps >= 1 && num_steps <= T, ErrorKind::kInvalidConfig,
          "num_steps must lie in [1, T]");
  std::vector<int> seq;
  seq.reserve(num_steps);
  for (int i = num_steps; i >= 1; --i)
    seq.push_back(static_cast<int>(static_cast<long long>(i) * T / num_steps));
  return seq;
}

Tensor guided_eps(const Denoiser& model, const Tensor& z_t, int t, double guidance_scale) {
  Tensor cond = model(z_t, t, Branch::kConditional);
  require_same_shape(z_t, cond, "denoiser output");
  if (guidance_scale == 1.0) return cond;
  Tensor uncond = model(z_t, t, Branch::kUnconditional);
  require_same_shape(z_t, uncond, "denoiser output");
  return cfg_combine(uncond, cond, guidance_scale);
}

Tensor sample(const Denoiser& model, const Tensor& z_T, const SamplerConfig& cfg,
              const NoiseSchedule& sched) {
  validate(cfg, sched);
  const std::vector<int> seq = timestep_sequence(sched.T, cfg.num_steps);
  Rng rng(cfg.seed);
  Tensor z = z_T;

  switch (cfg.kind) {
    case SamplerKind::kDdpm: {
      // Respaced ancestral chain over the subsequence; identical to the plain
      // chain when num_steps == T.
      std::vector<double> betas(seq.size());
      for (std::size_t j = 0; j < seq.size(); ++j) {
        const int t = seq[seq.size() - 1 - j];
        const int t_prev = j == 0 ? 0 : seq[seq.size() - j];
        betas[j] = 1.0 - sched.alpha_bar(t) / sched.alpha_bar(t_prev);
      }
      const NoiseSchedule respaced = static_cast<int>(seq.size()) == sched.T
                                         ? sched
                                         : schedule_from_betas(std::move(betas));
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const int step = static_cast<int>(seq.size() - i);
        Tensor eps = guided_eps(model, z, seq[i], cfg.guidance_scale);
        Tensor noise = rng.normal_tensor(z.shape());
        z = ddpm_step(z, eps, step, respaced, noise);
      }
      return z;
    }
    case SamplerKind::kDdim: {
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const int t = seq[i];
        const int t_prev = i + 1 < seq.size() ? seq[i + 1] : 0;
        Tensor eps = guided_eps(model, z, t, cfg.guidance_scale);
        Tensor noise = cfg.eta > 0.0 ? rng.normal_tensor(z.shape()) : Tensor();
        z = ddim_step(z, eps, t, t_prev, sched, cfg.eta, noise);
      }
      return z;
    }
    case SamplerKind::kUniPC: {
      // Multistep predictor in data-prediction form with B(h) = expm1(h). The
      // first-order update is the deterministic DDIM step; the second-order
      // term uses the previous step's data prediction. Order 1 is used at the
      // first step and for the final step to t = 0.
      std::optional<Tensor> prev_x0;
      double prev_lambda = 0.0;
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const int t = seq[i];
        const int t_prev = i + 1 < seq.size() ? seq[i + 1] : 0;
        Tensor eps = guided_eps(model, z, t, cfg.guidance_scale);
        Tensor next = ddim_step(z, eps, t, t_prev, sched, 0.0, Tensor());
        if (cfg.unipc_order >= 2) {
          const double ab = sched.alpha_bar(t);
          const double sqrt_ab = std::sqrt(ab);
          const double sqrt_1m_ab = std::sqrt(1.0 - ab);
          Tensor x0(z.shape());
          for (std::size_t k = 0; k < x0.size(); ++k) x0[k] = (z[k] - sqrt_1m_ab * eps[k]) / sqrt_ab;
          const double lambda = log_snr(ab);
          if (prev_x0 && t_prev > 0) {
            const double ab_next = sched.alpha_bar(t_prev);
            const double h = log_snr(ab_next) - lambda;
            const double r = (prev_lambda - lambda) / h;
            const double coef = std::sqrt(ab_next) * std::expm1(-h) * 0.5 / r;
            for (std::size_t k = 0; k < next.size(); ++k)
              next[k] -= coef * ((*prev_x0)[k] - x0[k]);
          }
          prev_x0 = std::move(x0);
          prev_lambda = lambda;
        }
        z = std::move(next);
      }
      return z;
    }
  }
  return z;
}

}  // namespace vtryon::diffusion
