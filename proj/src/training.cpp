// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vtryon/error.hpp"

namespace vtryon::train {

void validate(const TrainConfig& c) {
  require(c.lr > 0.0 && std::isfinite(c.lr), ErrorKind::kInvalidConfig, "lr must be > 0");
  require(c.weight_decay >= 0.0, ErrorKind::kInvalidConfig, "weight_decay must be >= 0");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0,
          ErrorKind::kInvalidConfig, "betas must lie in [0, 1)");
  require(c.eps > 0.0, ErrorKind::kInvalidConfig, "eps must be > 0");
  require(c.steps >= 1, ErrorKind::kInvalidConfig, "steps must be >= 1");
  require(c.batch_size >= 1, ErrorKind::kInvalidConfig, "batch_size must be >= 1");
  require(c.p_drop >= 0.0 && c.p_drop <= 1.0, ErrorKind::kInvalidConfig,
          "p_drop must lie in [0, 1]");
  require(c.log_every >= 1, ErrorKind::kInvalidConfig, "log_every must be >= 1");
  require(c.ckpt_every >= 0, ErrorKind::kInvalidConfig, "ckpt_every must be >= 0");
}

void adamw_step(Tensor& param, const Tensor& grad, AdamState& st, long step,
                const TrainConfig& cfg) {
  require_same_shape(param, grad, "adamw gradient");
  require(step >= 1, ErrorKind::kInvalidRange, "adamw step must be >= 1");
  if (st.m.empty()) {
    st.m = Tensor::zeros_like(param);
    st.v = Tensor::zeros_like(param);
  }
  require_same_shape(param, st.m, "adamw first moment");
  require_same_shape(param, st.v, "adamw second moment");
  require(grad.all_finite(), ErrorKind::kNonFinite, "non-finite gradient");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  double* p = param.data();
  double* m = st.m.data();
  double* v = st.v.data();
  const double* g = grad.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    p[i] *= decay;
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mh = m[i] / c1;
    const double vh = v[i] / c2;
    p[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
  }
}

void AdamW::step(const nn::ParamList& params) {
  ++steps_;
  for (const auto& p : params) {
    ag::Var var = p.var;
    Tensor& value = var.mutable_value();
    const Tensor& g = var.grad();
    try {
      if (g.empty())
        adamw_step(value, Tensor::zeros_like(value), state_[p.name], steps_, cfg_);
      else
        adamw_step(value, g, state_[p.name], steps_, cfg_);
    } catch (const Error& e) {
      raise(e.kind(), "parameter " + p.name + ": " + e.what());
    }
  }
}

void run_loop(const nn::ParamList& params, const StepFn& step_fn, const TrainConfig& cfg,
              AdamW& opt, LoopState& st, const LoopHooks& hooks) {
  validate(cfg);
  while (st.step < cfg.steps) {
    const int step = st.step + 1;
    for (const auto& p : params) {
      ag::Var v = p.var;
      v.zero_grad();
    }
    double loss_value = 0.0;
    {
      ag::Var loss = step_fn(st.rng);
      loss_value = loss.value()[0];
      if (!std::isfinite(loss_value))
        raise(ErrorKind::kDivergence, "non-finite loss at step " + std::to_string(step));
      ag::backward(loss);
    }
    opt.step(params);
    st.window_sum += loss_value;
    ++st.window_count;
    st.step = step;
    if (step % cfg.log_every == 0) {  // partial windows carry over on resume
      const LossRow row{step, st.window_sum / st.window_count};
      st.trace.push_back(row);
      st.window_sum = 0.0;
      st.window_count = 0;
      if (hooks.on_log) hooks.on_log(row);
    }
    if (cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(step);
  }
}

void write_loss_trace(const std::string& path, const std::vector<LossRow>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.good(), ErrorKind::kIo, "cannot write " + path);
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d\t%.17g\n", r.step, r.loss);
    os << buf;
  }
  require(os.good(), ErrorKind::kIo, "write failed for " + path);
}

std::vector<LossRow> read_loss_trace(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), ErrorKind::kIo, "cannot read " + path);
  std::vector<LossRow> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    LossRow r{};
    require(static_cast<bool>(ls >> r.step >> r.loss), ErrorKind::kFormat,
            "bad loss trace row '" + line + "' in " + path);
    rows.push_back(r);
  }
  return rows;
}

std::pair<double, double> window_means(const std::vector<LossRow>& rows, double fraction) {
  require(!rows.empty(), ErrorKind::kEmptyDataset, "empty loss trace");
  const std::size_t k =
      std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(rows.size())));
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    head += rows[i].loss;
    tail += rows[rows.size() - 1 - i].loss;
  }
  return {head / static_cast<double>(k), tail / static_cast<double>(k)};
}

}  // namespace vtryon::train
