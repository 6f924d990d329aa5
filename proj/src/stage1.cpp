// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/stage1.hpp"

#include "vtryon/error.hpp"

namespace vtryon::stage1 {

namespace {

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 3) return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  return x;
}

}  // namespace

void validate(const CawConfig& c) {
  unet::validate(c.unet);
  cond::validate(c.projection);
  require(c.unet.in_channels == c.unet.out_channels, ErrorKind::kInvalidConfig,
          "warping unet must map latents to latents");
  require(c.unet.context_dim == c.projection.token_dim, ErrorKind::kInvalidConfig,
          "unet context_dim must equal token_dim");
  require(c.use_projection || c.projection.feature_dim == c.projection.token_dim,
          ErrorKind::kInvalidConfig, "projection bypass needs feature_dim == token_dim");
  require(c.grid_tokens >= 1, ErrorKind::kInvalidConfig, "grid_tokens must be >= 1");
}

CawModel::CawModel(const CawConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  Rng rng(seed);
  unet_ = unet::Unet(cfg_.unet, rng);
  proj_ = cond::Projection(cfg_.projection, rng);
  Tensor n = rng.normal_tensor({3 * tokens_per_source(), cfg_.projection.token_dim});
  for (std::size_t i = 0; i < n.size(); ++i) n[i] *= 0.02;
  null_ = ag::Var::parameter(std::move(n));
}

int CawModel::tokens_per_source() const {
  return cfg_.use_projection ? cfg_.projection.num_queries : cfg_.grid_tokens;
}

ag::Var CawModel::tokens(const ag::Var& f_person, const ag::Var& f_cloth,
                         const ag::Var& f_mask) const {
  if (!cfg_.use_projection) {
    const int d = cfg_.projection.token_dim;
    return cond::concat_tokens(
        {cond::raw_tokens(f_person, d), cond::raw_tokens(f_cloth, d), cond::raw_tokens(f_mask, d)});
  }
  return cond::concat_tokens({proj_(f_person, cond::SourceTag::kPerson),
                              proj_(f_cloth, cond::SourceTag::kCloth),
                              proj_(f_mask, cond::SourceTag::kMask)});
}

ag::Var CawModel::forward(const ag::Var& z_t, const std::vector<int>& timesteps,
                          const ag::Var& tokens, std::vector<Tensor>* probs) const {
  return unet_(z_t, timesteps, tokens, probs);
}

nn::ParamList CawModel::params() const {
  nn::ParamList out;
  unet_.params("caw.unet", out);
  if (cfg_.use_projection) proj_.params("caw.proj", out);
  out.push_back({"caw.null_tokens", null_});
  return out;
}

std::vector<Example> prepare(const std::vector<synth::Sample>& samples, const vae::Autoencoder& vae,
                             const cond::FrozenEncoder& encoder) {
  require(!samples.empty(), ErrorKind::kEmptyDataset, "no samples for the warping stage");
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    require(s.has_warped, ErrorKind::kMissingSupervision,
            "sample " + s.id + " has no warped garment ground truth");
    Example e;
    e.id = s.id;
    e.z0 = vae.encode(s.warped_gt, vae::EncodeMode::kMean);
    auto flat = [&](const Tensor& im) {
      const Tensor f = cond::flatten_grid(encoder.features(im));
      return f.reshaped({f.dim(1), f.dim(2)});
    };
    e.f_person = flat(s.person);
    e.f_cloth = flat(s.cloth);
    e.f_mask = flat(s.mask);
    out.push_back(std::move(e));
  }
  return out;
}

Tensor gather(const std::vector<const Tensor*>& items, const std::vector<int>& idx) {
  std::vector<Tensor> parts;
  parts.reserve(idx.size());
  for (int i : idx) parts.push_back(*items.at(i));
  return Tensor::stack(parts);
}

ag::Var step_loss(const CawModel& model, const std::vector<Example>& data,
                  const diffusion::NoiseSchedule& sched, const train::TrainConfig& cfg, Rng& rng,
                  StepDraw* draw) {
  require(!data.empty(), ErrorKind::kEmptyDataset, "empty warping-stage dataset");
  const int b = cfg.batch_size;
  const int n = static_cast<int>(data.size());
  StepDraw d;
  d.index.resize(b);
  for (int& i : d.index) i = rng.uniform_int(0, n - 1);
  d.timesteps.resize(b);
  for (int& t : d.timesteps) t = rng.uniform_int(1, sched.T);
  d.drop.resize(b);
  for (int i = 0; i < b; ++i) d.drop[i] = rng.uniform() < cfg.p_drop;

  std::vector<const Tensor*> z0, fp, fc, fm;
  for (const auto& e : data) {
    z0.push_back(&e.z0);
    fp.push_back(&e.f_person);
    fc.push_back(&e.f_cloth);
    fm.push_back(&e.f_mask);
  }
  const Tensor z0b = gather(z0, d.index);
  d.eps = rng.normal_tensor(z0b.shape());
  const std::size_t per = z0b.size() / b;
  Tensor zt(z0b.shape());
  for (int i = 0; i < b; ++i) {
    const Tensor zi = diffusion::forward_diffuse(z0b.slice0(i), d.timesteps[i], d.eps.slice0(i), sched);
    std::copy(zi.data(), zi.data() + per, zt.data() + i * per);
  }
  ag::Var tokens = model.tokens(ag::Var::constant(gather(fp, d.index)),
                                ag::Var::constant(gather(fc, d.index)),
                                ag::Var::constant(gather(fm, d.index)));
  tokens = ag::where_batch(tokens, model.null_sequence(), d.drop);
  const ag::Var pred = model.forward(ag::Var::constant(std::move(zt)), d.timesteps, tokens);
  ag::Var loss = ag::mse(pred, d.eps);
  if (draw) {
    d.eps_pred = pred.value();
    *draw = std::move(d);
  }
  return loss;
}

void train(CawModel& model, const std::vector<Example>& data, const diffusion::NoiseSchedule& sched,
           const train::TrainConfig& cfg, train::AdamW& opt, train::LoopState& state,
           const train::LoopHooks& hooks) {
  require(!data.empty(), ErrorKind::kEmptyDataset, "empty warping-stage dataset");
  const nn::ParamList params = model.params();
  train::run_loop(
      params, [&](Rng& rng) { return step_loss(model, data, sched, cfg, rng); }, cfg, opt, state,
      hooks);
}

std::vector<train::LossRow> train(CawModel& model, const std::vector<Example>& data,
                                  const diffusion::NoiseSchedule& sched,
                                  const train::TrainConfig& cfg) {
  train::AdamW opt(cfg);
  train::LoopState state;
  state.rng = Rng(cfg.seed);
  train(model, data, sched, cfg, opt, state);
  return state.trace;
}

Tensor warp_garment(const CawModel& model, const vae::Autoencoder& vae,
                    const cond::FrozenEncoder& encoder, const diffusion::NoiseSchedule& sched,
                    const Tensor& person, const Tensor& cloth, const Tensor& mask,
                    const diffusion::SamplerConfig& sampler, std::uint64_t seed) {
  const bool single = person.rank() == 3;
  const Tensor p = as_batch(person), c = as_batch(cloth), m = as_batch(mask);
  require(p.dim(0) == c.dim(0) && p.dim(0) == m.dim(0) && p.dim(1) == c.dim(1) &&
              p.dim(2) == c.dim(2) && p.dim(1) == m.dim(1) && p.dim(2) == m.dim(2),
          ErrorKind::kShapeMismatch, "person, cloth and mask sizes differ");
  const int n = p.dim(0);
  const int f = vae.config().downsample_factor;
  ag::NoGradGuard guard;
  const ag::Var tokens = model.tokens(ag::Var::constant(cond::flatten_grid(encoder.features(p))),
                                      ag::Var::constant(cond::flatten_grid(encoder.features(c))),
                                      ag::Var::constant(cond::flatten_grid(encoder.features(m))));
  const ag::Var null = model.null_tokens(n);
  const diffusion::Denoiser denoiser = [&](const Tensor& z, int t, diffusion::Branch branch) {
    const std::vector<int> ts(n, t);
    return model
        .forward(ag::Var::constant(z), ts, branch == diffusion::Branch::kConditional ? tokens : null)
        .value();
  };
  Rng rng(seed);
  const Tensor z_T = rng.normal_tensor({n, p.dim(1) / f, p.dim(2) / f, vae.config().latent_channels});
  diffusion::SamplerConfig cfg = sampler;
  cfg.seed = splitmix64(seed);
  const Tensor out = vae.decode(diffusion::sample(denoiser, z_T, cfg, sched));
  if (single) return out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

}  // namespace vtryon::stage1
