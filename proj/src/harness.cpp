// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/harness.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vtryon/error.hpp"
#include "vtryon/image_io.hpp"

namespace vtryon::harness {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string command_name(Command c) {
  switch (c) {
    case kGenData: return "gen-data";
    case kTrainVae: return "train-vae";
    case kTrainStage1: return "train-stage1";
    case kTrainStage2: return "train-stage2";
    case kTryon: return "tryon";
    case kEval: return "eval";
    case kInspect: return "inspect-ckpt";
  }
  return "?";
}

namespace {

constexpr unsigned kTrain = kTrainVae | kTrainStage1 | kTrainStage2;
constexpr unsigned kStages = kTrainStage1 | kTrainStage2;
constexpr unsigned kAll = kGenData | kTrain | kTryon | kEval | kInspect;

// Command-specific defaults that differ from the table.
struct DefaultOverride {
  Command command;
  const char* key;
  const char* value;
};
constexpr DefaultOverride kOverrides[] = {
    {kTrainVae, "lr", "1e-3"},
    {kTrainVae, "batch_size", "8"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

}  // namespace

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"config", "", kAll, "config file of key = value lines"},
      {"seed", "0", kAll, "random seed"},
      {"out", "", kGenData | kTrain | kTryon | kEval,
       "output directory, checkpoint (default <stage>.ckpt) or report"},
      {"data", "", kTrain | kTryon, "dataset directory"},
      // gen-data
      {"n", "16", kGenData, "number of samples"},
      {"height", "64", kGenData, "image height"},
      {"width", "48", kGenData, "image width"},
      {"divisor", "4", kGenData, "required divisor of height and width"},
      {"max_rotation_deg", "20", kGenData, "torso rotation range (degrees)"},
      {"max_translation", "0.1", kGenData, "torso offset range (fraction of canvas)"},
      {"min_scale", "0.9", kGenData, "minimum torso scale"},
      {"max_scale", "1.1", kGenData, "maximum torso scale"},
      {"max_shear", "1.5", kGenData, "sinusoidal shear amplitude (pixels)"},
      {"families", "stripes,checks,solid,logo_glyph", kGenData, "garment texture families"},
      {"occlusion_probability", "0.3", kGenData, "chance of a hair bar over the chest"},
      {"identity_deformation", "false", kGenData, "translation-only garment placement"},
      // optimisation
      {"steps", "2000", kTrain, "training steps"},
      {"lr", "5e-5", kTrain, "learning rate"},
      {"weight_decay", "1e-2", kTrain, "decoupled weight decay"},
      {"beta1", "0.9", kTrain, "AdamW beta1"},
      {"beta2", "0.999", kTrain, "AdamW beta2"},
      {"adam_eps", "1e-8", kTrain, "AdamW epsilon"},
      {"batch_size", "4", kTrain, "minibatch size"},
      {"p_drop", "0.1", kStages, "conditioning dropout probability"},
      {"log_every", "10", kTrain, "steps per loss-trace row"},
      {"ckpt_every", "0", kTrain, "steps between periodic checkpoints (0 = off)"},
      {"loss_trace", "", kTrain, "loss trace path (default <out>.loss.tsv)"},
      {"resume", "", kTrain, "checkpoint to continue from"},
      // autoencoder
      {"downsample_factor", "4", kTrainVae, "autoencoder factor f (4 or 8)"},
      {"latent_channels", "4", kTrainVae, "latent channels c"},
      {"vae_base_width", "32", kTrainVae, "autoencoder base width"},
      {"kl_weight", "1e-6", kTrainVae, "KL weight"},
      // diffusion stages
      {"vae_ckpt", "", kStages, "trained autoencoder checkpoint"},
      {"unet_base_width", "32", kStages, "unet base width"},
      {"channel_mults", "1,2,4", kStages, "unet width multipliers per level"},
      {"num_res_blocks", "1", kStages, "residual blocks per level"},
      {"attention_levels", "1,2", kStages, "levels with cross-attention"},
      {"time_embed_dim", "128", kStages, "timestep embedding width"},
      {"head_channels", "32", kStages, "channels per attention head"},
      {"num_queries", "8", kStages, "learned queries per source"},
      {"token_dim", "64", kStages, "token width d"},
      {"proj_heads", "2", kStages, "projection attention heads"},
      {"use_projection", "true", kStages, "false feeds raw encoder features as tokens"},
      {"encoder_widths", "16,32,64", kStages, "frozen encoder layer widths"},
      {"encoder_seed", "20260101", kStages, "frozen encoder seed"},
      {"T", "200", kStages, "diffusion steps"},
      {"beta_start", "5e-4", kStages, "first beta"},
      {"beta_end", "0.1", kStages, "last beta"},
      {"concat_sources", "person,cloth,warped_cloth", kTrainStage2, "latents concatenated after z_t"},
      {"person_cloth_tokens", "false", kTrainStage2, "also attend to person and cloth tokens"},
      {"warped_source", "ground_truth", kTrainStage2, "ground_truth or stage1_model"},
      {"stage1_ckpt", "", kTrainStage2 | kTryon, "warping-stage checkpoint"},
      // sampling
      {"sampler", "unipc", kTrainStage2 | kTryon, "ddpm, ddim or unipc"},
      {"num_steps", "50", kTrainStage2 | kTryon, "sampling steps"},
      {"guidance_scale", "7.5", kTrainStage2 | kTryon, "classifier-free guidance scale"},
      {"eta", "0", kTrainStage2 | kTryon, "ddim eta"},
      {"unipc_order", "2", kTrainStage2 | kTryon, "unipc order (1 or 2)"},
      // tryon
      {"stage2_ckpt", "", kTryon, "fusion-stage checkpoint"},
      {"person", "", kTryon, "person image"},
      {"cloth", "", kTryon, "garment image"},
      {"mask", "", kTryon, "mask image"},
      {"grid", "", kTryon, "side-by-side (person, cloth, warped, result) image"},
      {"split", "test", kTryon, "train or test"},
      {"pairing", "paired", kTryon, "paired or unpaired"},
      {"limit", "0", kTryon, "maximum samples (0 = all)"},
      {"batch", "8", kTryon, "samples per sampling batch"},
      // eval
      {"generated", "", kEval, "paired generation directory"},
      {"generated_unpaired", "", kEval, "unpaired generation directory"},
      {"reference", "", kEval, "reference dataset directory"},
      {"kid_subset_size", "100", kEval, "KID subset size"},
      {"kid_num_subsets", "100", kEval, "KID subsets"},
      {"report_flat", "", kEval, "flat report path (default <out>.txt)"},
      // inspect
      {"ckpt", "", kInspect, "checkpoint to describe"},
  };
  return table;
}

Settings::Settings(Command command) : command_(command) {
  for (const auto& k : key_table())
    if (k.commands & command) values_[k.key] = k.default_value;
  for (const auto& o : kOverrides)
    if (o.command == command) values_[o.key] = o.value;
}

bool Settings::accepts(const std::string& key) const { return values_.count(key) > 0; }

void Settings::set(const std::string& key, const std::string& value) {
  require(accepts(key), ErrorKind::kUnknownKey,
          "unknown key '" + key + "' for " + command_name(command_));
  values_[key] = value;
}

void Settings::load_file(const fs::path& path) {
  std::ifstream is(path);
  require(is.good(), ErrorKind::kIo, "cannot read config " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    require(eq != std::string::npos, ErrorKind::kFormat, where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    require(accepts(key), ErrorKind::kUnknownKey,
            where + ": unknown key '" + key + "' for " + command_name(command_));
    values_[key] = trim(line.substr(eq + 1));
  }
}

const std::string& Settings::str(const std::string& key) const {
  const auto it = values_.find(key);
  require(it != values_.end(), ErrorKind::kUnknownKey, "key '" + key + "' not available");
  return it->second;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  require(ec == std::errc() && p == end, ErrorKind::kInvalidConfig,
          "key '" + key + "': cannot parse '" + v + "'");
  return out;
}

}  // namespace

int Settings::integer(const std::string& key) const { return parse_number<int>(key, str(key)); }
std::uint64_t Settings::u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, str(key));
}
double Settings::real(const std::string& key) const {
  const std::string& v = str(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    require(used == v.size(), ErrorKind::kInvalidConfig, "");
    return d;
  } catch (const std::exception&) {
    raise(ErrorKind::kInvalidConfig, "key '" + key + "': cannot parse '" + v + "'");
  }
}
bool Settings::boolean(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  raise(ErrorKind::kInvalidConfig, "key '" + key + "': expected true or false, got '" + v + "'");
}
std::vector<int> Settings::ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(str(key))) out.push_back(parse_number<int>(key, item));
  return out;
}
std::vector<std::string> Settings::list(const std::string& key) const { return split_list(str(key)); }

namespace {

synth::TextureFamily parse_family(const std::string& s) {
  if (s == "stripes") return synth::TextureFamily::kStripes;
  if (s == "checks") return synth::TextureFamily::kChecks;
  if (s == "solid") return synth::TextureFamily::kSolid;
  if (s == "logo_glyph") return synth::TextureFamily::kLogoGlyph;
  raise(ErrorKind::kInvalidConfig, "unknown texture family '" + s + "'");
}

}  // namespace

synth::SceneParams scene_params(const Settings& s) {
  synth::SceneParams p;
  p.height = s.integer("height");
  p.width = s.integer("width");
  p.divisor = s.integer("divisor");
  p.max_rotation_deg = s.real("max_rotation_deg");
  p.max_translation = s.real("max_translation");
  p.min_scale = s.real("min_scale");
  p.max_scale = s.real("max_scale");
  p.max_shear = s.real("max_shear");
  p.families.clear();
  for (const auto& f : s.list("families")) p.families.push_back(parse_family(f));
  p.occlusion_probability = s.real("occlusion_probability");
  p.identity_deformation = s.boolean("identity_deformation");
  synth::validate(p);
  return p;
}

train::TrainConfig train_config(const Settings& s) {
  train::TrainConfig c;
  c.lr = s.real("lr");
  c.weight_decay = s.real("weight_decay");
  c.beta1 = s.real("beta1");
  c.beta2 = s.real("beta2");
  c.eps = s.real("adam_eps");
  c.steps = s.integer("steps");
  c.batch_size = s.integer("batch_size");
  if (s.accepts("p_drop")) c.p_drop = s.real("p_drop");
  c.seed = s.u64("seed");
  c.log_every = s.integer("log_every");
  c.ckpt_every = s.integer("ckpt_every");
  train::validate(c);
  return c;
}

vae::AutoencoderConfig autoencoder_config(const Settings& s) {
  vae::AutoencoderConfig c;
  c.downsample_factor = s.integer("downsample_factor");
  c.latent_channels = s.integer("latent_channels");
  c.base_width = s.integer("vae_base_width");
  c.kl_weight = s.real("kl_weight");
  c.latent_scale.assign(std::max(0, c.latent_channels), 1.0);
  vae::validate(c);
  return c;
}

cond::EncoderConfig encoder_config(const Settings& s) {
  cond::EncoderConfig c;
  c.widths = s.ints("encoder_widths");
  c.seed = s.u64("encoder_seed");
  cond::validate(c);
  return c;
}

diffusion::ScheduleConfig schedule_config(const Settings& s) {
  diffusion::ScheduleConfig c;
  c.T = s.integer("T");
  c.beta_start = s.real("beta_start");
  c.beta_end = s.real("beta_end");
  diffusion::make_schedule(c);
  return c;
}

diffusion::SamplerConfig sampler_config(const Settings& s) {
  diffusion::SamplerConfig c;
  c.kind = diffusion::parse_sampler_kind(s.str("sampler"));
  c.num_steps = s.integer("num_steps");
  c.guidance_scale = s.real("guidance_scale");
  c.eta = s.real("eta");
  c.unipc_order = s.integer("unipc_order");
  c.seed = s.u64("seed");
  return c;
}

namespace {

unet::UnetConfig unet_config(const Settings& s, int latent_channels) {
  unet::UnetConfig u;
  u.in_channels = latent_channels;
  u.out_channels = latent_channels;
  u.base_width = s.integer("unet_base_width");
  u.channel_mults = s.ints("channel_mults");
  u.num_res_blocks = s.integer("num_res_blocks");
  u.attention_levels = s.ints("attention_levels");
  u.time_embed_dim = s.integer("time_embed_dim");
  u.head_channels = s.integer("head_channels");
  u.context_dim = s.integer("token_dim");
  return u;
}

cond::ProjectionConfig projection_config(const Settings& s, int feature_dim) {
  cond::ProjectionConfig p;
  p.num_queries = s.integer("num_queries");
  p.token_dim = s.integer("token_dim");
  p.feature_dim = feature_dim;
  p.heads = s.integer("proj_heads");
  return p;
}

}  // namespace

stage1::CawConfig caw_config(const Settings& s) {
  const cond::EncoderConfig e = encoder_config(s);
  stage1::CawConfig c;
  c.unet = unet_config(s, 0);
  c.projection = projection_config(s, e.widths.back());
  c.use_projection = s.boolean("use_projection");
  return c;
}

stage2::FusionConfig fusion_config(const Settings& s) {
  const cond::EncoderConfig e = encoder_config(s);
  stage2::FusionConfig c;
  c.unet = unet_config(s, 0);
  c.projection = projection_config(s, e.widths.back());
  c.use_projection = s.boolean("use_projection");
  c.concat_sources.clear();
  for (const auto& x : s.list("concat_sources")) c.concat_sources.push_back(stage2::parse_concat_source(x));
  c.person_cloth_tokens = s.boolean("person_cloth_tokens");
  return c;
}

// ---- JSON echoes ----

json to_json(const vae::AutoencoderConfig& c) {
  return {{"downsample_factor", c.downsample_factor}, {"latent_channels", c.latent_channels},
          {"base_width", c.base_width},               {"kl_weight", c.kl_weight},
          {"latent_scale", c.latent_scale}};
}
vae::AutoencoderConfig autoencoder_from_json(const json& j) {
  vae::AutoencoderConfig c;
  c.downsample_factor = j.at("downsample_factor");
  c.latent_channels = j.at("latent_channels");
  c.base_width = j.at("base_width");
  c.kl_weight = j.at("kl_weight");
  c.latent_scale = j.at("latent_scale").get<std::vector<double>>();
  vae::validate(c);
  return c;
}

json to_json(const cond::EncoderConfig& c) { return {{"widths", c.widths}, {"seed", c.seed}}; }
cond::EncoderConfig encoder_from_json(const json& j) {
  cond::EncoderConfig c;
  c.widths = j.at("widths").get<std::vector<int>>();
  c.seed = j.at("seed");
  return c;
}

json to_json(const diffusion::ScheduleConfig& c) {
  return {{"T", c.T}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}
diffusion::ScheduleConfig schedule_from_json(const json& j) {
  return {j.at("T").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>()};
}

json to_json(const diffusion::SamplerConfig& c) {
  return {{"kind", diffusion::to_string(c.kind)}, {"num_steps", c.num_steps},
          {"guidance_scale", c.guidance_scale},   {"eta", c.eta},
          {"seed", c.seed},                       {"unipc_order", c.unipc_order}};
}
diffusion::SamplerConfig sampler_from_json(const json& j) {
  diffusion::SamplerConfig c;
  c.kind = diffusion::parse_sampler_kind(j.at("kind"));
  c.num_steps = j.at("num_steps");
  c.guidance_scale = j.at("guidance_scale");
  c.eta = j.at("eta");
  c.seed = j.at("seed");
  c.unipc_order = j.at("unipc_order");
  return c;
}

json to_json(const train::TrainConfig& c) {
  return {{"lr", c.lr},         {"weight_decay", c.weight_decay}, {"beta1", c.beta1},
          {"beta2", c.beta2},   {"eps", c.eps},                   {"steps", c.steps},
          {"batch_size", c.batch_size}, {"p_drop", c.p_drop},     {"seed", c.seed},
          {"log_every", c.log_every},   {"ckpt_every", c.ckpt_every}};
}
train::TrainConfig train_from_json(const json& j) {
  train::TrainConfig c;
  c.lr = j.at("lr");
  c.weight_decay = j.at("weight_decay");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.eps = j.at("eps");
  c.steps = j.at("steps");
  c.batch_size = j.at("batch_size");
  c.p_drop = j.at("p_drop");
  c.seed = j.at("seed");
  c.log_every = j.at("log_every");
  c.ckpt_every = j.at("ckpt_every");
  return c;
}

namespace {

json unet_json(const unet::UnetConfig& u) {
  return {{"in_channels", u.in_channels},       {"out_channels", u.out_channels},
          {"base_width", u.base_width},         {"channel_mults", u.channel_mults},
          {"num_res_blocks", u.num_res_blocks}, {"attention_levels", u.attention_levels},
          {"time_embed_dim", u.time_embed_dim}, {"context_dim", u.context_dim},
          {"head_channels", u.head_channels},   {"max_groups", u.max_groups}};
}
unet::UnetConfig unet_from_json(const json& j) {
  unet::UnetConfig u;
  u.in_channels = j.at("in_channels");
  u.out_channels = j.at("out_channels");
  u.base_width = j.at("base_width");
  u.channel_mults = j.at("channel_mults").get<std::vector<int>>();
  u.num_res_blocks = j.at("num_res_blocks");
  u.attention_levels = j.at("attention_levels").get<std::vector<int>>();
  u.time_embed_dim = j.at("time_embed_dim");
  u.context_dim = j.at("context_dim");
  u.head_channels = j.at("head_channels");
  u.max_groups = j.at("max_groups");
  return u;
}
json projection_json(const cond::ProjectionConfig& p) {
  return {{"num_queries", p.num_queries}, {"token_dim", p.token_dim}, {"feature_dim", p.feature_dim},
          {"heads", p.heads},             {"ff_mult", p.ff_mult}};
}
cond::ProjectionConfig projection_from_json(const json& j) {
  cond::ProjectionConfig p;
  p.num_queries = j.at("num_queries");
  p.token_dim = j.at("token_dim");
  p.feature_dim = j.at("feature_dim");
  p.heads = j.at("heads");
  p.ff_mult = j.at("ff_mult");
  return p;
}

}  // namespace

json to_json(const stage1::CawConfig& c) {
  return {{"unet", unet_json(c.unet)},
          {"projection", projection_json(c.projection)},
          {"use_projection", c.use_projection},
          {"grid_tokens", c.grid_tokens}};
}
stage1::CawConfig caw_from_json(const json& j) {
  stage1::CawConfig c;
  c.unet = unet_from_json(j.at("unet"));
  c.projection = projection_from_json(j.at("projection"));
  c.use_projection = j.at("use_projection");
  c.grid_tokens = j.at("grid_tokens");
  return c;
}

json to_json(const stage2::FusionConfig& c) {
  std::vector<std::string> sources;
  for (auto s : c.concat_sources) sources.push_back(stage2::to_string(s));
  return {{"latent_channels", c.latent_channels},
          {"unet", unet_json(c.unet)},
          {"projection", projection_json(c.projection)},
          {"concat_sources", sources},
          {"use_projection", c.use_projection},
          {"person_cloth_tokens", c.person_cloth_tokens},
          {"grid_tokens", c.grid_tokens}};
}
stage2::FusionConfig fusion_from_json(const json& j) {
  stage2::FusionConfig c;
  c.latent_channels = j.at("latent_channels");
  c.unet = unet_from_json(j.at("unet"));
  c.projection = projection_from_json(j.at("projection"));
  c.concat_sources.clear();
  for (const auto& s : j.at("concat_sources")) c.concat_sources.push_back(stage2::parse_concat_source(s));
  c.use_projection = j.at("use_projection");
  c.person_cloth_tokens = j.at("person_cloth_tokens");
  c.grid_tokens = j.at("grid_tokens");
  return c;
}

synth::Manifest gen_data(const Settings& s) {
  require(!s.str("out").empty(), ErrorKind::kInvalidConfig, "gen-data needs out");
  return synth::gen_dataset(s.integer("n"), scene_params(s), s.u64("seed"), s.str("out"));
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kVae: return "vae";
    case Stage::kStage1: return "stage1";
    case Stage::kStage2: return "stage2";
  }
  return "?";
}

fs::path periodic_path(const fs::path& out, int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, ".step%06d", step);
  fs::path p = out;
  p.replace_filename(out.stem().string() + buf + out.extension().string());
  return p;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void put_vae(ckpt::Checkpoint& c, const vae::Autoencoder& v) {
  ckpt::put_params(c, v.params());
  c.manifest["vae"] = to_json(v.config());
  c.manifest["vae_hash"] = hex64(nn::hash_params(v.params()));
}

void put_loop(ckpt::Checkpoint& c, const train::AdamW& opt, const train::LoopState& st) {
  for (const auto& [name, s] : opt.state()) {
    c.put("optim.m." + name, s.m);
    c.put("optim.v." + name, s.v);
  }
  c.put("optim.steps", Tensor({1}, static_cast<double>(opt.steps())));
  c.put("loop.window_sum", Tensor({1}, st.window_sum));
  c.put("loop.window_count", Tensor({1}, static_cast<double>(st.window_count)));
  Tensor trace({static_cast<int>(st.trace.size()), 2});
  for (std::size_t i = 0; i < st.trace.size(); ++i) {
    trace[2 * i] = st.trace[i].step;
    trace[2 * i + 1] = st.trace[i].loss;
  }
  c.put("loop.trace", std::move(trace));
  c.manifest["step"] = st.step;
  c.manifest["rng_state"] = st.rng.state();
  c.manifest["metrics"] = {{"loss", st.trace.empty() ? json(nullptr) : json(st.trace.back().loss)}};
}

void restore_loop(const ckpt::Checkpoint& c, const nn::ParamList& params, train::AdamW& opt,
                  train::LoopState& st) {
  ckpt::load_params(c, params);
  for (const auto& p : params) {
    const std::string m = "optim.m." + p.name;
    if (!c.has(m)) continue;
    opt.state()[p.name] = {c.get(m), c.get("optim.v." + p.name)};
  }
  opt.set_steps(static_cast<long>(c.get("optim.steps")[0]));
  st.step = c.manifest.at("step");
  st.rng.set_state(c.manifest.at("rng_state"));
  st.window_sum = c.get("loop.window_sum")[0];
  st.window_count = static_cast<int>(c.get("loop.window_count")[0]);
  const Tensor& t = c.get("loop.trace");
  st.trace.clear();
  for (int i = 0; i < (t.rank() == 2 ? t.dim(0) : 0); ++i)
    st.trace.push_back({static_cast<int>(t[2 * i]), t[2 * i + 1]});
}

// Config echo without the keys allowed to change on resume.
json resumable_echo(json config) {
  if (config.contains("train")) {
    config["train"].erase("steps");
    config["train"].erase("ckpt_every");
  }
  return config;
}

std::vector<synth::Sample> train_samples(const Settings& s) {
  require(!s.str("data").empty(), ErrorKind::kInvalidConfig, "training needs data");
  auto samples = synth::load_dataset(s.str("data"), synth::Split::kTrain, synth::Pairing::kPaired);
  require(!samples.empty(), ErrorKind::kEmptyDataset,
          "no training samples in " + s.str("data") + "/pairs_train.txt");
  return samples;
}

vae::Autoencoder vae_from_settings(const Settings& s) {
  require(!s.str("vae_ckpt").empty(), ErrorKind::kMissingCheckpoint,
          command_name(s.command()) + " needs vae_ckpt");
  const ckpt::Checkpoint c = ckpt::load(s.str("vae_ckpt"));
  require(c.manifest.value("stage", "") == "vae", ErrorKind::kMissingCheckpoint,
          s.str("vae_ckpt") + " is not an autoencoder checkpoint");
  return load_vae(c);
}

}  // namespace

vae::Autoencoder load_vae(const ckpt::Checkpoint& c) {
  vae::Autoencoder v(autoencoder_from_json(c.manifest.at("vae")), 0);
  ckpt::load_params(c, v.params());
  return v;
}

TrainResult run_training(Stage stage, const Settings& s) {
  const train::TrainConfig tc = train_config(s);
  const fs::path out = s.str("out").empty() ? fs::path(to_string(stage) + ".ckpt") : fs::path(s.str("out"));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  TrainResult result;
  result.checkpoint = out;
  result.loss_trace = s.str("loss_trace").empty() ? fs::path(out.string() + ".loss.tsv")
                                                  : fs::path(s.str("loss_trace"));
  const auto samples = train_samples(s);

  ckpt::Checkpoint base;
  base.manifest["format_version"] = ckpt::kFormatVersion;
  base.manifest["stage"] = to_string(stage);
  json config;
  config["train"] = to_json(tc);

  // Everything below is captured by the step function and the hooks.
  vae::Autoencoder vae_model;
  std::vector<Tensor> images;
  cond::FrozenEncoder encoder;
  diffusion::NoiseSchedule sched;
  stage1::CawModel warper;
  stage2::FusionModel fusion;
  std::vector<stage1::Example> ex1;
  std::vector<stage2::Example> ex2;
  nn::ParamList params;
  train::StepFn step_fn;

  if (stage == Stage::kVae) {
    vae_model = vae::Autoencoder(autoencoder_config(s), tc.seed);
    for (const auto& x : samples) {
      images.push_back(x.person);
      images.push_back(x.cloth);
      if (x.has_warped) images.push_back(x.warped_gt);
      if (x.has_tryon) images.push_back(x.tryon_gt);
    }
    config["autoencoder"] = to_json(vae_model.config());
    params = vae_model.params();
    step_fn = [&](Rng& rng) {
      std::vector<int> idx(tc.batch_size);
      for (int& i : idx) i = rng.uniform_int(0, static_cast<int>(images.size()) - 1);
      return vae_model.loss(vae::gather_batch(images, idx), rng);
    };
  } else {
    vae_model = vae_from_settings(s);
    const cond::EncoderConfig ec = encoder_config(s);
    encoder = cond::FrozenEncoder(ec);
    const diffusion::ScheduleConfig sc = schedule_config(s);
    sched = diffusion::make_schedule(sc);
    config["encoder"] = to_json(ec);
    config["schedule"] = to_json(sc);
    config["vae_hash"] = hex64(nn::hash_params(vae_model.params()));
    if (stage == Stage::kStage1) {
      stage1::CawConfig cc = caw_config(s);
      cc.unet.in_channels = cc.unet.out_channels = vae_model.config().latent_channels;
      warper = stage1::CawModel(cc, tc.seed);
      ex1 = stage1::prepare(samples, vae_model, encoder);
      config["caw"] = to_json(warper.config());
      params = warper.params();
      step_fn = [&](Rng& rng) { return stage1::step_loss(warper, ex1, sched, tc, rng); };
    } else {
      stage2::FusionConfig fc = fusion_config(s);
      fc.latent_channels = fc.unet.out_channels = vae_model.config().latent_channels;
      fusion = stage2::FusionModel(fc, tc.seed);
      stage2::WarpSourceOptions wo;
      wo.source = stage2::parse_warped_source(s.str("warped_source"));
      config["warped_source"] = stage2::to_string(wo.source);
      if (wo.source == stage2::WarpedSource::kStage1Model) {
        require(!s.str("stage1_ckpt").empty(), ErrorKind::kMissingCheckpoint,
                "warped_source=stage1_model needs stage1_ckpt");
        const Pipeline p = load_pipeline(s.str("stage1_ckpt"), "");
        warper = p.warper;
        wo.warper = &warper;
        wo.sched = p.sched;
        wo.sampler = sampler_config(s);
        wo.seed = tc.seed;
        config["stage1_sampler"] = to_json(wo.sampler);
      }
      ex2 = stage2::prepare(samples, vae_model, encoder, wo);
      config["fusion"] = to_json(fusion.config());
      params = fusion.params();
      step_fn = [&](Rng& rng) { return stage2::step_loss(fusion, ex2, sched, tc, rng); };
    }
  }
  config["data"] = s.str("data");
  base.manifest["config"] = config;

  train::AdamW opt(tc);
  train::LoopState st;
  st.rng = Rng(tc.seed);
  if (!s.str("resume").empty()) {
    const ckpt::Checkpoint r = ckpt::load(s.str("resume"));
    require(r.manifest.value("stage", "") == to_string(stage), ErrorKind::kResumeMismatch,
            "resume checkpoint is for stage '" + r.manifest.value("stage", "") + "', not '" +
                to_string(stage) + "'");
    require(resumable_echo(r.manifest.at("config")) == resumable_echo(config),
            ErrorKind::kResumeMismatch,
            "resume checkpoint config differs from the current run");
    restore_loop(r, params, opt, st);
    require(st.step <= tc.steps, ErrorKind::kResumeMismatch,
            "resume checkpoint is at step " + std::to_string(st.step) + ", beyond steps=" +
                std::to_string(tc.steps));
  }

  auto snapshot = [&]() {
    ckpt::Checkpoint c = base;
    if (stage == Stage::kVae) {
      c.manifest["vae"] = to_json(vae_model.config());
    } else {
      put_vae(c, vae_model);
    }
    ckpt::put_params(c, params);
    put_loop(c, opt, st);
    return c;
  };

  train::LoopHooks hooks;
  hooks.on_checkpoint = [&](int step) {
    const fs::path p = periodic_path(out, step);
    ckpt::save(snapshot(), p);
    result.periodic.push_back(p);
  };
  train::run_loop(params, step_fn, tc, opt, st, hooks);

  if (stage == Stage::kVae) vae_model.set_latent_scale(vae::fit_latent_scale(vae_model, images));
  ckpt::save(snapshot(), out);
  train::write_loss_trace(result.loss_trace.string(), st.trace);
  result.trace = st.trace;
  return result;
}

Pipeline load_pipeline(const fs::path& stage1_ckpt, const fs::path& stage2_ckpt) {
  Pipeline p;
  bool have_frozen = false;
  std::string vae_hash;
  auto frozen = [&](const ckpt::Checkpoint& c) {
    const json& cfg = c.manifest.at("config");
    if (!have_frozen) {
      p.vae = load_vae(c);
      p.encoder = cond::FrozenEncoder(encoder_from_json(cfg.at("encoder")));
      p.sched = diffusion::make_schedule(schedule_from_json(cfg.at("schedule")));
      vae_hash = c.manifest.at("vae_hash");
      have_frozen = true;
    } else {
      require(c.manifest.at("vae_hash") == vae_hash, ErrorKind::kResumeMismatch,
              "stage checkpoints were trained on different autoencoders");
    }
  };
  if (!stage1_ckpt.empty()) {
    const ckpt::Checkpoint c = ckpt::load(stage1_ckpt);
    require(c.manifest.value("stage", "") == "stage1", ErrorKind::kMissingCheckpoint,
            stage1_ckpt.string() + " is not a warping-stage checkpoint");
    frozen(c);
    p.warper = stage1::CawModel(caw_from_json(c.manifest.at("config").at("caw")), 0);
    ckpt::load_params(c, p.warper.params());
    p.has_warper = true;
  }
  if (!stage2_ckpt.empty()) {
    const ckpt::Checkpoint c = ckpt::load(stage2_ckpt);
    require(c.manifest.value("stage", "") == "stage2", ErrorKind::kMissingCheckpoint,
            stage2_ckpt.string() + " is not a fusion-stage checkpoint");
    frozen(c);
    p.fusion = stage2::FusionModel(fusion_from_json(c.manifest.at("config").at("fusion")), 0);
    ckpt::load_params(c, p.fusion.params());
    p.has_fusion = true;
  }
  return p;
}

namespace {

Image8 to_rgb8(const Tensor& t) {
  const Image8 im = from_signed_unit(t);
  return im.channels == 1 ? gray_to_rgb(im) : im;
}

}  // namespace

void run_tryon(const Settings& s) {
  require(!s.str("stage1_ckpt").empty(), ErrorKind::kMissingCheckpoint, "tryon needs stage1_ckpt");
  require(!s.str("stage2_ckpt").empty(), ErrorKind::kMissingCheckpoint, "tryon needs stage2_ckpt");
  require(!s.str("out").empty(), ErrorKind::kInvalidConfig, "tryon needs out");
  const Pipeline p = load_pipeline(s.str("stage1_ckpt"), s.str("stage2_ckpt"));
  const diffusion::SamplerConfig sampler = sampler_config(s);
  const std::uint64_t seed = s.u64("seed");

  if (s.str("data").empty()) {
    require(!s.str("person").empty() && !s.str("cloth").empty() && !s.str("mask").empty(),
            ErrorKind::kInvalidConfig, "tryon needs data, or person, cloth and mask");
    const Tensor person = to_signed_unit(read_png(s.str("person"), 3));
    const Tensor cloth = to_signed_unit(read_png(s.str("cloth"), 3));
    const Tensor mask = to_signed_unit(read_png(s.str("mask"), 1));
    const auto r = stage2::tryon(p.warper, p.fusion, p.vae, p.encoder, p.sched, person, cloth, mask,
                                 sampler, seed);
    const fs::path out = s.str("out");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_png(out, from_signed_unit(r.image));
    if (!s.str("grid").empty())
      write_png(s.str("grid"), hconcat({to_rgb8(person), to_rgb8(cloth), to_rgb8(r.warped),
                                        to_rgb8(r.image)}));
    return;
  }

  const auto split = synth::parse_split(s.str("split"));
  const auto pairing = synth::parse_pairing(s.str("pairing"));
  auto samples = synth::load_dataset(s.str("data"), split, pairing, seed);
  const int limit = s.integer("limit");
  if (limit > 0 && static_cast<int>(samples.size()) > limit) samples.resize(limit);
  require(!samples.empty(), ErrorKind::kEmptyDataset, "no samples to process");
  const fs::path out = s.str("out");
  fs::create_directories(out / "tryon");
  fs::create_directories(out / "warped");
  std::ofstream pairs(out / "pairs.txt", std::ios::binary | std::ios::trunc);
  const int batch = std::max(1, s.integer("batch"));
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch));
    std::vector<Tensor> person, cloth, mask;
    for (std::size_t i = start; i < end; ++i) {
      person.push_back(samples[i].person);
      cloth.push_back(samples[i].cloth);
      mask.push_back(samples[i].mask);
    }
    const auto r = stage2::tryon(p.warper, p.fusion, p.vae, p.encoder, p.sched, Tensor::stack(person),
                                 Tensor::stack(cloth), Tensor::stack(mask), sampler,
                                 derive_seed(seed, samples[start].id));
    for (std::size_t i = start; i < end; ++i) {
      const int k = static_cast<int>(i - start);
      write_png(out / "tryon" / (samples[i].id + ".png"), from_signed_unit(r.image.slice0(k)));
      write_png(out / "warped" / (samples[i].id + ".png"), from_signed_unit(r.warped.slice0(k)));
      pairs << samples[i].id << '\t' << samples[i].cloth_id << '\n';
    }
  }
}

metrics::MetricReport run_eval(const Settings& s) {
  require(!s.str("reference").empty(), ErrorKind::kInvalidConfig, "eval needs reference");
  require(!s.str("generated").empty() || !s.str("generated_unpaired").empty(),
          ErrorKind::kInvalidConfig, "eval needs generated and/or generated_unpaired");
  const metrics::EncoderEmbedder embedder{cond::FrozenEncoder(cond::EncoderConfig{})};
  metrics::KidParams kp;
  kp.subset_size = s.integer("kid_subset_size");
  kp.num_subsets = s.integer("kid_num_subsets");
  kp.seed = s.u64("seed");
  metrics::MetricReport r;
  if (!s.str("generated").empty())
    metrics::evaluate(s.str("generated"), s.str("reference"), metrics::EvalMode::kPaired, embedder, kp, r);
  if (!s.str("generated_unpaired").empty())
    metrics::evaluate(s.str("generated_unpaired"), s.str("reference"), metrics::EvalMode::kUnpaired,
                      embedder, kp, r);
  if (!s.str("out").empty()) {
    const fs::path json_path = s.str("out");
    const fs::path flat = s.str("report_flat").empty() ? fs::path(json_path.string() + ".txt")
                                                       : fs::path(s.str("report_flat"));
    if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path());
    metrics::write_report(r, json_path, flat);
  }
  return r;
}

std::string inspect_checkpoint(const fs::path& path) {
  const ckpt::Checkpoint c = ckpt::load(path);
  std::ostringstream os;
  os << c.manifest.dump(2) << "\n";
  std::size_t total = 0;
  for (const auto& [name, t] : c.arrays) {
    os << name << " " << shape_str(t.shape()) << "\n";
    total += t.size();
  }
  os << c.arrays.size() << " arrays, " << total << " values\n";
  return os.str();
}

}  // namespace vtryon::harness
