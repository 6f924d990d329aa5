// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal tape-based reverse-mode differentiation over Tensor. Each op builds a
// Node holding its value and, when any input requires a gradient, a closure that
// accumulates into the inputs' gradients.

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "vtryon/tensor.hpp"

namespace vtryon::ag {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() { node_->grad = Tensor(); }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const noexcept { return node_; }

 private:
  friend Var make_result(Tensor value, std::vector<Var> inputs,
                         std::function<void(Node&)> backward);
  std::shared_ptr<Node> node_;
};

// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Seeds d(root)/d(root) = 1 and propagates through the recorded graph.
void backward(const Var& root);

// Creates an op result. `backward` is dropped (and inputs released) when no
// input needs a gradient or grad mode is off.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);
// Gradient buffer of an input, zero-allocated on first use.
Tensor& grad_of(Node& n);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// x[..., C] + b[C]
Var add_bias(const Var& x, const Var& b);
// x[N, ..., C] + e[N, C]
Var add_batch_channel(const Var& x, const Var& e);

// x[..., in] * w[in, out] (+ b[out] if defined).
Var linear(const Var& x, const Var& w, const Var& b);
// NHWC convolution. w has shape [k*k*Cin, Cout] laid out (ky, kx, ci).
Var conv2d(const Var& x, const Var& w, const Var& b, int kernel, int stride, int pad);

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var concat(std::span<const Var> parts, int axis);
Var slice_last(const Var& x, int start, int len);
Var reshape(const Var& x, Shape shape);
Var upsample_nearest2x(const Var& x);
// Broadcasts x to a new leading batch axis of size n.
Var expand_batch(const Var& x, int n);
// out[i] = use_alt[i] ? alt : x[i]; alt has x's per-item shape.
Var where_batch(const Var& x, const Var& alt, const std::vector<bool>& use_alt);

// Multi-head scaled dot-product attention. q[N, Lq, D], k/v[N, Lk, D].
// When `probs` is non-null it receives the softmax weights [N, H, Lq, Lk].
Var attention(const Var& q, const Var& k, const Var& v, int heads, Tensor* probs = nullptr);

// Mean of squared differences (scalar). Value computed by mean_squared_error.
Var mse(const Var& pred, const Tensor& target);
// Mean over the batch of KL(N(mean, exp(logvar)) || N(0, I)) summed over elements.
Var gaussian_kl(const Var& mean, const Var& logvar);

double mean_squared_error(std::span<const double> a, std::span<const double> b);

}  // namespace vtryon::ag
