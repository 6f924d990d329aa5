// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Flat key/value settings, checkpointed training runs and pipeline loading
// behind the command-line tool.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vtryon/checkpoint.hpp"
#include "vtryon/metrics.hpp"
#include "vtryon/stage2.hpp"

namespace vtryon::harness {

enum Command : unsigned {
  kGenData = 1u << 0,
  kTrainVae = 1u << 1,
  kTrainStage1 = 1u << 2,
  kTrainStage2 = 1u << 3,
  kTryon = 1u << 4,
  kEval = 1u << 5,
  kInspect = 1u << 6,
};

std::string command_name(Command c);

struct KeySpec {
  std::string key;
  std::string default_value;
  unsigned commands;
  std::string help;
};

const std::vector<KeySpec>& key_table();

// Values for one command: defaults, then a config file, then overrides.
class Settings {
 public:
  explicit Settings(Command command);

  Command command() const { return command_; }
  // `key = value` lines; '#' starts a comment. Unknown keys are errors.
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  bool accepts(const std::string& key) const;

  const std::string& str(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<int> ints(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  Command command_;
  std::map<std::string, std::string> values_;
};

// Typed views of the settings.
synth::SceneParams scene_params(const Settings& s);
train::TrainConfig train_config(const Settings& s);
vae::AutoencoderConfig autoencoder_config(const Settings& s);
cond::EncoderConfig encoder_config(const Settings& s);
diffusion::ScheduleConfig schedule_config(const Settings& s);
diffusion::SamplerConfig sampler_config(const Settings& s);
stage1::CawConfig caw_config(const Settings& s);
stage2::FusionConfig fusion_config(const Settings& s);

// JSON echoes used in checkpoint manifests.
nlohmann::ordered_json to_json(const vae::AutoencoderConfig& c);
nlohmann::ordered_json to_json(const cond::EncoderConfig& c);
nlohmann::ordered_json to_json(const diffusion::ScheduleConfig& c);
nlohmann::ordered_json to_json(const diffusion::SamplerConfig& c);
nlohmann::ordered_json to_json(const train::TrainConfig& c);
nlohmann::ordered_json to_json(const stage1::CawConfig& c);
nlohmann::ordered_json to_json(const stage2::FusionConfig& c);
vae::AutoencoderConfig autoencoder_from_json(const nlohmann::ordered_json& j);
cond::EncoderConfig encoder_from_json(const nlohmann::ordered_json& j);
diffusion::ScheduleConfig schedule_from_json(const nlohmann::ordered_json& j);
diffusion::SamplerConfig sampler_from_json(const nlohmann::ordered_json& j);
train::TrainConfig train_from_json(const nlohmann::ordered_json& j);
stage1::CawConfig caw_from_json(const nlohmann::ordered_json& j);
stage2::FusionConfig fusion_from_json(const nlohmann::ordered_json& j);

synth::Manifest gen_data(const Settings& s);

enum class Stage { kVae, kStage1, kStage2 };
std::string to_string(Stage s);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_trace;
  std::vector<std::filesystem::path> periodic;
  std::vector<train::LossRow> trace;
};

// Path of the periodic checkpoint written after `step`.
std::filesystem::path periodic_path(const std::filesystem::path& out, int step);

// Trains one stage from `data`, writing `out` and the loss trace. With
// `resume` set, continues from that checkpoint (same config apart from steps
// and ckpt_every) and reproduces the uninterrupted run bitwise.
TrainResult run_training(Stage stage, const Settings& s);

// Frozen pieces plus trained models rebuilt from checkpoint manifests.
struct Pipeline {
  vae::Autoencoder vae;
  cond::FrozenEncoder encoder;
  diffusion::NoiseSchedule sched;
  stage1::CawModel warper;
  stage2::FusionModel fusion;
  bool has_warper = false;
  bool has_fusion = false;
};

vae::Autoencoder load_vae(const ckpt::Checkpoint& c);
Pipeline load_pipeline(const std::filesystem::path& stage1_ckpt,
                       const std::filesystem::path& stage2_ckpt);

// `tryon` command: single image (person/cloth/mask keys) or whole split (data key).
void run_tryon(const Settings& s);
metrics::MetricReport run_eval(const Settings& s);
std::string inspect_checkpoint(const std::filesystem::path& path);

}  // namespace vtryon::harness
