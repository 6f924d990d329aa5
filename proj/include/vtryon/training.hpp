// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// AdamW and the single-writer step loop shared by every trainable stage.

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vtryon/nn.hpp"
#include "vtryon/rng.hpp"

namespace vtryon::train {

struct TrainConfig {
  double lr = 5e-5;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int steps = 2000;
  int batch_size = 4;
  double p_drop = 0.1;
  std::uint64_t seed = 0;
  int log_every = 10;
  int ckpt_every = 0;  // 0 disables periodic checkpoints
};

void validate(const TrainConfig& cfg);

struct AdamState {
  Tensor m, v;
};

// One AdamW update at 1-based step `step`: decay first (p *= 1 - lr*wd), then
// the bias-corrected adaptive step.
void adamw_step(Tensor& param, const Tensor& grad, AdamState& state, long step,
                const TrainConfig& cfg);

class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}
  // Applies one update to every parameter from its accumulated gradient.
  void step(const nn::ParamList& params);
  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  std::map<std::string, AdamState>& state() { return state_; }
  const std::map<std::string, AdamState>& state() const { return state_; }

 private:
  TrainConfig cfg_;
  long steps_ = 0;
  std::map<std::string, AdamState> state_;
};

struct LossRow {
  int step;
  double loss;
};

// Everything needed to continue a run bitwise.
struct LoopState {
  int step = 0;
  Rng rng;
  double window_sum = 0.0;
  int window_count = 0;
  std::vector<LossRow> trace;
};

// Builds the scalar loss of one step; all randomness must come from `rng`.
using StepFn = std::function<ag::Var(Rng& rng)>;

struct LoopHooks {
  std::function<void(const LossRow&)> on_log;
  std::function<void(int step)> on_checkpoint;
};

// Runs steps state.step+1 .. cfg.steps. The trace holds one row per log
// interval with the interval's mean loss. Throws a divergence error naming the
// step on a non-finite loss.
void run_loop(const nn::ParamList& params, const StepFn& step_fn, const TrainConfig& cfg,
              AdamW& opt, LoopState& state, const LoopHooks& hooks = {});

void write_loss_trace(const std::string& path, const std::vector<LossRow>& rows);
std::vector<LossRow> read_loss_trace(const std::string& path);

// Mean of the first and last `fraction` of rows.
std::pair<double, double> window_means(const std::vector<LossRow>& rows, double fraction = 0.1);

}  // namespace vtryon::train
