// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/autoencoder.hpp"

#include <cmath>

#include "vtryon/error.hpp"

namespace vtryon::vae {

namespace {

constexpr int kMaxGroups = 8;

int num_levels(int factor) { return factor == 8 ? 3 : 2; }

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 3) return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  return x;
}

}  // namespace

void validate(const AutoencoderConfig& c) {
  require(c.downsample_factor == 4 || c.downsample_factor == 8, ErrorKind::kInvalidConfig,
          "downsample_factor must be 4 or 8");
  require(c.latent_channels >= 1, ErrorKind::kInvalidConfig, "latent_channels must be >= 1");
  require(c.base_width >= 1, ErrorKind::kInvalidConfig, "base_width must be >= 1");
  require(c.kl_weight >= 0.0, ErrorKind::kInvalidConfig, "kl_weight must be >= 0");
  require(static_cast<int>(c.latent_scale.size()) == c.latent_channels, ErrorKind::kInvalidConfig,
          "latent_scale needs one entry per latent channel");
  for (double s : c.latent_scale)
    require(std::isfinite(s) && s > 0.0, ErrorKind::kInvalidConfig,
            "latent_scale entries must be finite and positive");
}

Autoencoder::Autoencoder(const AutoencoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  Rng rng(seed);
  const int levels = num_levels(cfg_.downsample_factor);
  const int b = cfg_.base_width;
  widths_ = {b};
  for (int i = 0; i < levels; ++i) widths_.push_back(b << std::min(i, 2));
  const int c = cfg_.latent_channels;

  enc_in_ = nn::Conv2d(3, widths_[0], 3, 1, rng);
  for (int i = 0; i < levels; ++i) {
    enc_down_.emplace_back(widths_[i], widths_[i + 1], 3, 2, rng);
    enc_res_.emplace_back(widths_[i + 1], widths_[i + 1], 0, kMaxGroups, rng);
  }
  enc_norm_ = nn::GroupNorm(widths_.back(), nn::pick_groups(widths_.back(), kMaxGroups));
  enc_out_ = nn::Conv2d(widths_.back(), 2 * c, 3, 1, rng);

  dec_in_ = nn::Conv2d(c, widths_.back(), 3, 1, rng);
  dec_mid_ = nn::ResBlock(widths_.back(), widths_.back(), 0, kMaxGroups, rng);
  for (int i = levels - 1; i >= 0; --i) {
    dec_up_.emplace_back(widths_[i + 1], widths_[i], 3, 1, rng);
    dec_res_.emplace_back(widths_[i], widths_[i], 0, kMaxGroups, rng);
  }
  dec_norm_ = nn::GroupNorm(widths_[0], nn::pick_groups(widths_[0], kMaxGroups));
  dec_out_ = nn::Conv2d(widths_[0], 3, 3, 1, rng);
}

void Autoencoder::set_latent_scale(std::vector<double> scale) {
  AutoencoderConfig next = cfg_;
  next.latent_scale = std::move(scale);
  validate(next);
  cfg_ = std::move(next);
}

void Autoencoder::check_image(const Tensor& x) const {
  require(x.rank() == 4 && x.dim(3) == 3, ErrorKind::kShapeMismatch,
          "autoencoder expects (N, H, W, 3) images, got " + shape_str(x.shape()));
  const int f = cfg_.downsample_factor;
  require(x.dim(1) % f == 0 && x.dim(2) % f == 0, ErrorKind::kDivisibility,
          "image " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
              " not divisible by " + std::to_string(f));
}

LatentStats Autoencoder::posterior(const ag::Var& x) const {
  check_image(x.value());
  ag::Var h = enc_in_(x);
  for (std::size_t i = 0; i < enc_down_.size(); ++i) h = enc_res_[i](enc_down_[i](h), {});
  h = enc_out_(ag::silu(enc_norm_(h)));
  const int c = cfg_.latent_channels;
  return {ag::slice_last(h, 0, c), ag::clamp(ag::slice_last(h, c, c), kLogVarMin, kLogVarMax)};
}

ag::Var Autoencoder::decode_raw(const ag::Var& z) const {
  require(z.value().rank() == 4 && z.value().dim(3) == cfg_.latent_channels,
          ErrorKind::kShapeMismatch,
          "decoder expects (N, h, w, " + std::to_string(cfg_.latent_channels) + ") latents, got " +
              shape_str(z.shape()));
  ag::Var h = dec_mid_(dec_in_(z), {});
  for (std::size_t i = 0; i < dec_up_.size(); ++i)
    h = dec_res_[i](dec_up_[i](ag::upsample_nearest2x(h)), {});
  return ag::tanh(dec_out_(ag::silu(dec_norm_(h))));
}

Tensor Autoencoder::encode(const Tensor& x, EncodeMode mode, std::uint64_t seed) const {
  require(x.rank() == 3 || x.rank() == 4, ErrorKind::kShapeMismatch,
          "encode expects (H, W, 3) or (N, H, W, 3), got " + shape_str(x.shape()));
  ag::NoGradGuard guard;
  const LatentStats st = posterior(ag::Var::constant(as_batch(x)));
  Tensor z = st.mean.value();
  if (mode == EncodeMode::kSample) {
    Rng rng(seed);
    const Tensor& lv = st.log_var.value();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += std::exp(0.5 * lv[i]) * rng.normal();
  }
  const int c = cfg_.latent_channels;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] *= cfg_.latent_scale[i % c];
  if (x.rank() == 3) return z.reshaped({z.dim(1), z.dim(2), z.dim(3)});
  return z;
}

Tensor Autoencoder::decode(const Tensor& z) const {
  require(z.rank() == 3 || z.rank() == 4, ErrorKind::kShapeMismatch,
          "decode expects (h, w, c) or (N, h, w, c), got " + shape_str(z.shape()));
  Tensor u = as_batch(z);
  require(u.dim(3) == cfg_.latent_channels, ErrorKind::kShapeMismatch,
          "latent has " + std::to_string(u.dim(3)) + " channels, expected " +
              std::to_string(cfg_.latent_channels));
  const int c = cfg_.latent_channels;
  for (std::size_t i = 0; i < u.size(); ++i) u[i] /= cfg_.latent_scale[i % c];
  ag::NoGradGuard guard;
  Tensor out = decode_raw(ag::Var::constant(std::move(u))).value();
  if (z.rank() == 3) return out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

ag::Var Autoencoder::loss(const Tensor& x, Rng& rng) const {
  const ag::Var input = ag::Var::constant(as_batch(x));
  const LatentStats st = posterior(input);
  const ag::Var eps = ag::Var::constant(rng.normal_tensor(st.mean.shape()));
  const ag::Var z = ag::add(st.mean, ag::mul(ag::exp(ag::scale(st.log_var, 0.5)), eps));
  ag::Var total = ag::mse(decode_raw(z), input.value());
  if (cfg_.kl_weight > 0.0)
    total = ag::add(total, ag::scale(ag::gaussian_kl(st.mean, st.log_var), cfg_.kl_weight));
  return total;
}

nn::ParamList Autoencoder::params() const {
  nn::ParamList out;
  enc_in_.params("vae.enc.in", out);
  for (std::size_t i = 0; i < enc_down_.size(); ++i) {
    enc_down_[i].params("vae.enc.down" + std::to_string(i), out);
    enc_res_[i].params("vae.enc.res" + std::to_string(i), out);
  }
  enc_norm_.params("vae.enc.norm", out);
  enc_out_.params("vae.enc.out", out);
  dec_in_.params("vae.dec.in", out);
  dec_mid_.params("vae.dec.mid", out);
  for (std::size_t i = 0; i < dec_up_.size(); ++i) {
    dec_up_[i].params("vae.dec.up" + std::to_string(i), out);
    dec_res_[i].params("vae.dec.res" + std::to_string(i), out);
  }
  dec_norm_.params("vae.dec.norm", out);
  dec_out_.params("vae.dec.out", out);
  return out;
}

Tensor gather_batch(const std::vector<Tensor>& items, const std::vector<int>& idx) {
  std::vector<Tensor> parts;
  parts.reserve(idx.size());
  for (int i : idx) parts.push_back(items.at(i));
  return Tensor::stack(parts);
}

std::vector<train::LossRow> train_vae(Autoencoder& model, const std::vector<Tensor>& images,
                                      const train::TrainConfig& cfg) {
  require(!images.empty(), ErrorKind::kEmptyDataset, "autoencoder training set is empty");
  for (const auto& im : images)
    require(im.shape() == images.front().shape(), ErrorKind::kShapeMismatch,
            "autoencoder training images differ in size");
  const nn::ParamList params = model.params();
  train::AdamW opt(cfg);
  train::LoopState state;
  state.rng = Rng(cfg.seed);
  const int n = static_cast<int>(images.size());
  auto step = [&](Rng& rng) {
    std::vector<int> idx(cfg.batch_size);
    for (int& i : idx) i = rng.uniform_int(0, n - 1);
    return model.loss(gather_batch(images, idx), rng);
  };
  train::run_loop(params, step, cfg, opt, state);
  return state.trace;
}

std::vector<double> fit_latent_scale(const Autoencoder& model, const std::vector<Tensor>& images) {
  require(!images.empty(), ErrorKind::kEmptyDataset, "no images for latent statistics");
  const int c = model.config().latent_channels;
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  std::size_t count = 0;
  ag::NoGradGuard guard;
  for (const auto& im : images) {
    const Tensor mean =
        model.posterior(ag::Var::constant(as_batch(im))).mean.value();
    for (std::size_t i = 0; i < mean.size(); ++i) {
      sum[i % c] += mean[i];
      sq[i % c] += mean[i] * mean[i];
    }
    count += mean.size() / c;
  }
  std::vector<double> scale(c);
  for (int k = 0; k < c; ++k) {
    const double mu = sum[k] / static_cast<double>(count);
    const double var = sq[k] / static_cast<double>(count) - mu * mu;
    require(var > 1e-20, ErrorKind::kDegenerateInput,
            "latent channel " + std::to_string(k) + " has zero variance");
    scale[k] = 1.0 / std::sqrt(var);
  }
  return scale;
}

}  // namespace vtryon::vae
