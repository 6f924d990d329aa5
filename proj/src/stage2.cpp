// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/stage2.hpp"

#include <algorithm>
#include <set>

#include "vtryon/error.hpp"

namespace vtryon::stage2 {

namespace {

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 3) return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  return x;
}

Tensor unbatch(const Tensor& x) { return x.reshaped({x.dim(1), x.dim(2), x.dim(3)}); }

Tensor flat_features(const cond::FrozenEncoder& encoder, const Tensor& image) {
  const Tensor f = cond::flatten_grid(encoder.features(image));
  return f.reshaped({f.dim(1), f.dim(2)});
}

bool has_source(const FusionConfig& cfg, ConcatSource s) {
  return std::find(cfg.concat_sources.begin(), cfg.concat_sources.end(), s) !=
         cfg.concat_sources.end();
}

}  // namespace

std::string to_string(ConcatSource s) {
  switch (s) {
    case ConcatSource::kPerson: return "person";
    case ConcatSource::kCloth: return "cloth";
    case ConcatSource::kWarpedCloth: return "warped_cloth";
  }
  return "?";
}

ConcatSource parse_concat_source(const std::string& s) {
  if (s == "person") return ConcatSource::kPerson;
  if (s == "cloth") return ConcatSource::kCloth;
  if (s == "warped_cloth") return ConcatSource::kWarpedCloth;
  raise(ErrorKind::kInvalidConfig, "unknown concat source '" + s + "'");
}

std::string to_string(WarpedSource s) {
  return s == WarpedSource::kGroundTruth ? "ground_truth" : "stage1_model";
}

WarpedSource parse_warped_source(const std::string& s) {
  if (s == "ground_truth") return WarpedSource::kGroundTruth;
  if (s == "stage1_model") return WarpedSource::kStage1Model;
  raise(ErrorKind::kInvalidConfig, "unknown warped source '" + s + "'");
}

int input_channels(const FusionConfig& cfg) {
  return cfg.latent_channels * (1 + static_cast<int>(cfg.concat_sources.size()));
}

void validate(const FusionConfig& c) {
  require(c.latent_channels >= 1, ErrorKind::kInvalidConfig, "latent_channels must be >= 1");
  std::set<ConcatSource> seen(c.concat_sources.begin(), c.concat_sources.end());
  require(seen.size() == c.concat_sources.size(), ErrorKind::kInvalidConfig,
          "duplicate concat source");
  unet::UnetConfig u = c.unet;
  u.in_channels = input_channels(c);
  unet::validate(u);
  cond::validate(c.projection);
  require(c.unet.out_channels == c.latent_channels, ErrorKind::kInvalidConfig,
          "fusion unet must output latent_channels");
  require(c.unet.context_dim == c.projection.token_dim, ErrorKind::kInvalidConfig,
          "unet context_dim must equal token_dim");
  require(c.use_projection || c.projection.feature_dim == c.projection.token_dim,
          ErrorKind::kInvalidConfig, "projection bypass needs feature_dim == token_dim");
  require(c.grid_tokens >= 1, ErrorKind::kInvalidConfig, "grid_tokens must be >= 1");
}

FusionModel::FusionModel(const FusionConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.unet.in_channels = input_channels(cfg_);
  validate(cfg_);
  Rng rng(seed);
  unet_ = unet::Unet(cfg_.unet, rng);
  proj_ = cond::Projection(cfg_.projection, rng);
  Tensor n = rng.normal_tensor({num_tokens(), cfg_.projection.token_dim});
  for (std::size_t i = 0; i < n.size(); ++i) n[i] *= 0.02;
  null_ = ag::Var::parameter(std::move(n));
}

int FusionModel::tokens_per_source() const {
  return cfg_.use_projection ? cfg_.projection.num_queries : cfg_.grid_tokens;
}

int FusionModel::num_tokens() const {
  return tokens_per_source() * (cfg_.person_cloth_tokens ? 3 : 1);
}

ag::Var FusionModel::tokens(const ag::Var& f_warped, const ag::Var& f_person,
                            const ag::Var& f_cloth) const {
  const int d = cfg_.projection.token_dim;
  auto one = [&](const ag::Var& f, cond::SourceTag tag) {
    return cfg_.use_projection ? proj_(f, tag) : cond::raw_tokens(f, d);
  };
  std::vector<ag::Var> parts{one(f_warped, cond::SourceTag::kWarpedCloth)};
  if (cfg_.person_cloth_tokens) {
    require(f_person.defined() && f_cloth.defined(), ErrorKind::kShapeMismatch,
            "person and cloth features required for person/cloth tokens");
    parts.push_back(one(f_person, cond::SourceTag::kPerson));
    parts.push_back(one(f_cloth, cond::SourceTag::kCloth));
  }
  return cond::concat_tokens(parts);
}

ag::Var FusionModel::forward(const ag::Var& z_t, const CondLatents& c,
                             const std::vector<int>& timesteps, const ag::Var& tokens) const {
  std::vector<ag::Var> parts{z_t};
  for (ConcatSource s : cfg_.concat_sources) {
    const ag::Var& z = s == ConcatSource::kPerson ? c.person
                       : s == ConcatSource::kCloth ? c.cloth
                                                   : c.warped;
    require(z.defined(), ErrorKind::kShapeMismatch, "missing " + to_string(s) + " latent");
    require(z.value().rank() == 4 && z.value().dim(0) == z_t.value().dim(0) &&
                z.value().dim(1) == z_t.value().dim(1) && z.value().dim(2) == z_t.value().dim(2) &&
                z.value().dim(3) == cfg_.latent_channels,
            ErrorKind::kShapeMismatch,
            to_string(s) + " latent " + shape_str(z.shape()) + " does not match z_t " +
                shape_str(z_t.shape()));
    parts.push_back(z);
  }
  return unet_(ag::concat(parts, 3), timesteps, tokens);
}

nn::ParamList FusionModel::params() const {
  nn::ParamList out;
  unet_.params("fusion.unet", out);
  if (cfg_.use_projection) proj_.params("fusion.proj", out);
  out.push_back({"fusion.null_tokens", null_});
  return out;
}

std::vector<Example> prepare(const std::vector<synth::Sample>& samples, const vae::Autoencoder& vae,
                             const cond::FrozenEncoder& encoder, const WarpSourceOptions& opts) {
  require(!samples.empty(), ErrorKind::kEmptyDataset, "no samples for the fusion stage");
  const bool from_model = opts.source == WarpedSource::kStage1Model;
  require(!from_model || opts.warper != nullptr, ErrorKind::kMissingCheckpoint,
          "stage1_model warped source needs a trained warping model");
  std::vector<Tensor> warped(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require(samples[i].has_tryon, ErrorKind::kMissingSupervision,
            "sample " + samples[i].id + " has no try-on ground truth");
    if (!from_model) {
      require(samples[i].has_warped, ErrorKind::kMissingSupervision,
              "sample " + samples[i].id + " has no warped garment ground truth");
      warped[i] = samples[i].warped_gt;
    }
  }
  if (from_model) {
    const std::size_t batch = static_cast<std::size_t>(std::max(1, opts.batch));
    for (std::size_t start = 0; start < samples.size(); start += batch) {
      const std::size_t end = std::min(samples.size(), start + batch);
      std::vector<Tensor> p, c, m;
      for (std::size_t i = start; i < end; ++i) {
        p.push_back(samples[i].person);
        c.push_back(samples[i].cloth);
        m.push_back(samples[i].mask);
      }
      const Tensor w = stage1::warp_garment(*opts.warper, vae, encoder, opts.sched,
                                            Tensor::stack(p), Tensor::stack(c), Tensor::stack(m),
                                            opts.sampler, derive_seed(opts.seed, samples[start].id));
      for (std::size_t i = start; i < end; ++i) warped[i] = w.slice0(static_cast<int>(i - start));
    }
  }
  std::vector<Example> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    Example e;
    e.id = s.id;
    e.z0 = vae.encode(s.tryon_gt, vae::EncodeMode::kMean);
    e.z_person = vae.encode(s.person, vae::EncodeMode::kMean);
    e.z_cloth = vae.encode(s.cloth, vae::EncodeMode::kMean);
    e.z_warped = vae.encode(warped[i], vae::EncodeMode::kMean);
    e.f_warped = flat_features(encoder, warped[i]);
    e.f_person = flat_features(encoder, s.person);
    e.f_cloth = flat_features(encoder, s.cloth);
    out.push_back(std::move(e));
  }
  return out;
}

ag::Var step_loss(const FusionModel& model, const std::vector<Example>& data,
                  const diffusion::NoiseSchedule& sched, const train::TrainConfig& cfg, Rng& rng,
                  StepDraw* draw) {
  require(!data.empty(), ErrorKind::kEmptyDataset, "empty fusion-stage dataset");
  const int b = cfg.batch_size;
  const int n = static_cast<int>(data.size());
  StepDraw d;
  d.index.resize(b);
  for (int& i : d.index) i = rng.uniform_int(0, n - 1);
  d.timesteps.resize(b);
  for (int& t : d.timesteps) t = rng.uniform_int(1, sched.T);
  d.drop.resize(b);
  for (int i = 0; i < b; ++i) d.drop[i] = rng.uniform() < cfg.p_drop;

  std::vector<const Tensor*> z0, zp, zc, zw, fw, fp, fc;
  for (const auto& e : data) {
    z0.push_back(&e.z0);
    zp.push_back(&e.z_person);
    zc.push_back(&e.z_cloth);
    zw.push_back(&e.z_warped);
    fw.push_back(&e.f_warped);
    fp.push_back(&e.f_person);
    fc.push_back(&e.f_cloth);
  }
  const Tensor z0b = stage1::gather(z0, d.index);
  d.eps = rng.normal_tensor(z0b.shape());
  const std::size_t per = z0b.size() / b;
  Tensor zt(z0b.shape());
  for (int i = 0; i < b; ++i) {
    const Tensor zi =
        diffusion::forward_diffuse(z0b.slice0(i), d.timesteps[i], d.eps.slice0(i), sched);
    std::copy(zi.data(), zi.data() + per, zt.data() + i * per);
  }
  const bool pc = model.config().person_cloth_tokens;
  ag::Var tokens =
      model.tokens(ag::Var::constant(stage1::gather(fw, d.index)),
                   pc ? ag::Var::constant(stage1::gather(fp, d.index)) : ag::Var(),
                   pc ? ag::Var::constant(stage1::gather(fc, d.index)) : ag::Var());
  tokens = ag::where_batch(tokens, model.null_sequence(), d.drop);
  CondLatents c{ag::Var::constant(stage1::gather(zp, d.index)),
                ag::Var::constant(stage1::gather(zc, d.index)),
                ag::Var::constant(stage1::gather(zw, d.index))};
  const ag::Var pred = model.forward(ag::Var::constant(std::move(zt)), c, d.timesteps, tokens);
  ag::Var loss = ag::mse(pred, d.eps);
  if (draw) {
    d.eps_pred = pred.value();
    *draw = std::move(d);
  }
  return loss;
}

void train(FusionModel& model, const std::vector<Example>& data,
           const diffusion::NoiseSchedule& sched, const train::TrainConfig& cfg,
           train::AdamW& opt, train::LoopState& state, const train::LoopHooks& hooks) {
  require(!data.empty(), ErrorKind::kEmptyDataset, "empty fusion-stage dataset");
  const nn::ParamList params = model.params();
  train::run_loop(
      params, [&](Rng& rng) { return step_loss(model, data, sched, cfg, rng); }, cfg, opt, state,
      hooks);
}

std::vector<train::LossRow> train(FusionModel& model, const std::vector<Example>& data,
                                  const diffusion::NoiseSchedule& sched,
                                  const train::TrainConfig& cfg) {
  train::AdamW opt(cfg);
  train::LoopState state;
  state.rng = Rng(cfg.seed);
  train(model, data, sched, cfg, opt, state);
  return state.trace;
}

Tensor fuse(const FusionModel& model, const vae::Autoencoder& vae,
            const cond::FrozenEncoder& encoder, const diffusion::NoiseSchedule& sched,
            const Tensor& person, const Tensor& cloth, const Tensor& warped,
            const diffusion::SamplerConfig& sampler, std::uint64_t seed) {
  const bool single = person.rank() == 3;
  const Tensor p = as_batch(person), c = as_batch(cloth), w = as_batch(warped);
  require(p.shape() == c.shape() && p.shape() == w.shape(), ErrorKind::kShapeMismatch,
          "person, cloth and warped garment sizes differ");
  const int n = p.dim(0);
  ag::NoGradGuard guard;
  const bool pc = model.config().person_cloth_tokens;
  const ag::Var tokens = model.tokens(
      ag::Var::constant(cond::flatten_grid(encoder.features(w))),
      pc ? ag::Var::constant(cond::flatten_grid(encoder.features(p))) : ag::Var(),
      pc ? ag::Var::constant(cond::flatten_grid(encoder.features(c))) : ag::Var());
  const ag::Var null = model.null_tokens(n);
  const CondLatents cl{ag::Var::constant(vae.encode(p, vae::EncodeMode::kMean)),
                       ag::Var::constant(vae.encode(c, vae::EncodeMode::kMean)),
                       ag::Var::constant(vae.encode(w, vae::EncodeMode::kMean))};
  const diffusion::Denoiser denoiser = [&](const Tensor& z, int t, diffusion::Branch branch) {
    const std::vector<int> ts(n, t);
    return model
        .forward(ag::Var::constant(z), cl, ts,
                 branch == diffusion::Branch::kConditional ? tokens : null)
        .value();
  };
  Rng rng(seed);
  const Tensor z_T = rng.normal_tensor(cl.person.shape());
  diffusion::SamplerConfig cfg = sampler;
  cfg.seed = splitmix64(seed);
  const Tensor out = vae.decode(diffusion::sample(denoiser, z_T, cfg, sched));
  return single ? unbatch(out) : out;
}

TryonResult tryon(const stage1::CawModel& warper, const FusionModel& fusion,
                  const vae::Autoencoder& vae, const cond::FrozenEncoder& encoder,
                  const diffusion::NoiseSchedule& sched, const Tensor& person, const Tensor& cloth,
                  const Tensor& mask, const diffusion::SamplerConfig& sampler, std::uint64_t seed) {
  TryonResult r;
  r.warped = stage1::warp_garment(warper, vae, encoder, sched, person, cloth, mask, sampler, seed);
  r.image = fuse(fusion, vae, encoder, sched, person, cloth, r.warped, sampler,
                 splitmix64(seed ^ 0x5851f42d4c957f2dULL));
  return r;
}

}  // namespace vtryon::stage2
