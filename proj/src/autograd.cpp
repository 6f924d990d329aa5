// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "vtryon/error.hpp"

namespace vtryon::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

int last_dim(const Tensor& t) { return t.shape().empty() ? 1 : t.shape().back(); }

void check_same(const Var& a, const Var& b, const char* op) {
  require_same_shape(a.value(), b.value(), op);
}

template <typename F>
Var unary(const Var& a, F&& f, std::function<void(Node&)> bw) {
  Tensor out(a.shape());
  const auto& x = a.value().vec();
  auto& y = out.vec();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result(std::move(out), {a}, std::move(bw));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
  if (!needs) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (const Var& v : inputs) out.node_->inputs.push_back(v.ptr());
  out.node_->backward = std::move(backward);
  return out;
}

Tensor& grad_of(Node& n) {
  if (n.grad.empty() && n.value.size() > 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void backward(const Var& root) {
  require(root.defined(), ErrorKind::kInvalidConfig, "backward on undefined value");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor& g = grad_of(*root.node());
  for (double& v : g.vec()) v += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      Tensor& g = grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      Tensor& g = grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      Tensor& g = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      Tensor& g = grad_of(y);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](Node& self) {
    Tensor& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var silu(const Var& a) {
  return unary(a, [](double x) { return x * sigmoid(x); }, [](Node& self) {
    Node& in = *self.inputs[0];
    Tensor& g = grad_of(in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = in.value[i];
      const double s = sigmoid(x);
      g[i] += self.grad[i] * (s * (1.0 + x * (1.0 - s)));
    }
  });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](Node& self) {
    Tensor& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](Node& self) {
    Tensor& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); }, [lo, hi](Node& self) {
    Node& in = *self.inputs[0];
    Tensor& g = grad_of(in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = in.value[i];
      if (x > lo && x < hi) g[i] += self.grad[i];
    }
  });
}

Var add_bias(const Var& x, const Var& b) {
  const int c = last_dim(x.value());
  require(b.value().size() == static_cast<std::size_t>(c), ErrorKind::kShapeMismatch,
          "add_bias: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
  Tensor out = x.value();
  const std::size_t rows = out.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] += b.value()[j];
  return make_result(std::move(out), {x, b}, [c, rows](Node& self) {
    Node& in = *self.inputs[0];
    Node& bias = *self.inputs[1];
    if (in.requires_grad) {
      Tensor& g = grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bias.requires_grad) {
      Tensor& g = grad_of(bias);
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
    }
  });
}

Var add_batch_channel(const Var& x, const Var& e) {
  const int n = x.value().dim(0);
  const int c = last_dim(x.value());
  require(e.shape() == Shape{n, c}, ErrorKind::kShapeMismatch,
          "add_batch_channel: " + shape_str(e.shape()) + " vs " + shape_str(x.shape()));
  Tensor out = x.value();
  const std::size_t per = out.size() / n / c;
  for (int i = 0; i < n; ++i)
    for (std::size_t r = 0; r < per; ++r)
      for (int j = 0; j < c; ++j) out[(i * per + r) * c + j] += e.value()[i * c + j];
  return make_result(std::move(out), {x, e}, [n, c, per](Node& self) {
    Node& in = *self.inputs[0];
    Node& emb = *self.inputs[1];
    if (in.requires_grad) {
      Tensor& g = grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (emb.requires_grad) {
      Tensor& g = grad_of(emb);
      for (int i = 0; i < n; ++i)
        for (std::size_t r = 0; r < per; ++r)
          for (int j = 0; j < c; ++j) g[i * c + j] += self.grad[(i * per + r) * c + j];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require(w.value().rank() == 2, ErrorKind::kShapeMismatch, "linear: weight must be 2-D");
  const int in_dim = w.value().dim(0);
  const int out_dim = w.value().dim(1);
  require(last_dim(x.value()) == in_dim, ErrorKind::kShapeMismatch,
          "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias)
    require(b.value().size() == static_cast<std::size_t>(out_dim), ErrorKind::kShapeMismatch,
            "linear: bias size");
  const int rows = static_cast<int>(x.value().size() / in_dim);
  Shape shape = x.shape();
  shape.back() = out_dim;
  Tensor out(shape);
  MatMap y(out.data(), rows, out_dim);
  y.noalias() = ConstMatMap(x.value().data(), rows, in_dim) *
                ConstMatMap(w.value().data(), in_dim, out_dim);
  if (has_bias) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), out_dim);
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result(std::move(out), std::move(inputs), [rows, in_dim, out_dim](Node& self) {
    ConstMatMap dy(self.grad.data(), rows, out_dim);
    Node& xin = *self.inputs[0];
    Node& win = *self.inputs[1];
    if (xin.requires_grad)
      MatMap(grad_of(xin).data(), rows, in_dim).noalias() +=
          dy * ConstMatMap(win.value.data(), in_dim, out_dim).transpose();
    if (win.requires_grad)
      MatMap(grad_of(win).data(), in_dim, out_dim).noalias() +=
          ConstMatMap(xin.value.data(), rows, in_dim).transpose() * dy;
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad)
      Eigen::Map<Eigen::RowVectorXd>(grad_of(*self.inputs[2]).data(), out_dim) +=
          dy.colwise().sum();
  });
}

namespace {

struct ConvGeom {
  int n, h, w, cin, k, stride, pad, ho, wo;
  int rows() const { return n * ho * wo; }
  int cols() const { return k * k * cin; }
};

// Per-thread grow-only buffers; im2col matrices are too large to allocate per call.
double* scratch(int slot, std::size_t n) {
  thread_local Storage buffers[2];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

void im2col(const ConvGeom& g, const double* x, double* cols) {
  const int kc = g.cols();
  for (int b = 0; b < g.n; ++b)
    for (int oy = 0; oy < g.ho; ++oy)
      for (int ox = 0; ox < g.wo; ++ox) {
        double* row = cols + static_cast<std::size_t>((b * g.ho + oy) * g.wo + ox) * kc;
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            double* dst = row + (ky * g.k + kx) * g.cin;
            if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
              std::fill(dst, dst + g.cin, 0.0);
            } else {
              const double* src = x + (static_cast<std::size_t>(b * g.h + iy) * g.w + ix) * g.cin;
              std::copy(src, src + g.cin, dst);
            }
          }
        }
      }
}

void col2im(const ConvGeom& g, const double* cols, double* dx) {
  const int kc = g.cols();
  for (int b = 0; b < g.n; ++b)
    for (int oy = 0; oy < g.ho; ++oy)
      for (int ox = 0; ox < g.wo; ++ox) {
        const double* row = cols + static_cast<std::size_t>((b * g.ho + oy) * g.wo + ox) * kc;
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            const double* src = row + (ky * g.k + kx) * g.cin;
            double* dst = dx + (static_cast<std::size_t>(b * g.h + iy) * g.w + ix) * g.cin;
            for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int kernel, int stride, int pad) {
  require(x.value().rank() == 4, ErrorKind::kShapeMismatch,
          "conv2d: input must be NHWC, got " + shape_str(x.shape()));
  if (kernel == 1 && stride == 1 && pad == 0) return linear(x, w, b);
  ConvGeom g{};
  g.n = x.value().dim(0);
  g.h = x.value().dim(1);
  g.w = x.value().dim(2);
  g.cin = x.value().dim(3);
  g.k = kernel;
  g.stride = stride;
  g.pad = pad;
  g.ho = (g.h + 2 * pad - kernel) / stride + 1;
  g.wo = (g.w + 2 * pad - kernel) / stride + 1;
  require(g.ho > 0 && g.wo > 0, ErrorKind::kShapeMismatch, "conv2d: empty output");
  require(w.value().rank() == 2 && w.value().dim(0) == g.cols(), ErrorKind::kShapeMismatch,
          "conv2d: weight " + shape_str(w.shape()) + " does not match input " +
              shape_str(x.shape()) + " with kernel " + std::to_string(kernel));
  const int cout = w.value().dim(1);
  const bool has_bias = b.defined();

  const std::size_t ncols = static_cast<std::size_t>(g.rows()) * g.cols();
  double* cols = scratch(0, ncols);
  im2col(g, x.value().data(), cols);
  Tensor out({g.n, g.ho, g.wo, cout});
  MatMap y(out.data(), g.rows(), cout);
  y.noalias() = ConstMatMap(cols, g.rows(), g.cols()) *
                ConstMatMap(w.value().data(), g.cols(), cout);
  if (has_bias) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), cout);

  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result(std::move(out), std::move(inputs), [g, cout](Node& self) {
    ConstMatMap dy(self.grad.data(), g.rows(), cout);
    Node& xin = *self.inputs[0];
    Node& win = *self.inputs[1];
    const std::size_t ncols = static_cast<std::size_t>(g.rows()) * g.cols();
    if (win.requires_grad) {
      double* cols = scratch(0, ncols);
      im2col(g, xin.value.data(), cols);
      MatMap(grad_of(win).data(), g.cols(), cout).noalias() +=
          ConstMatMap(cols, g.rows(), g.cols()).transpose() * dy;
    }
    if (xin.requires_grad) {
      double* dcols = scratch(1, ncols);
      MatMap(dcols, g.rows(), g.cols()).noalias() =
          dy * ConstMatMap(win.value.data(), g.cols(), cout).transpose();
      col2im(g, dcols, grad_of(xin).data());
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad)
      Eigen::Map<Eigen::RowVectorXd>(grad_of(*self.inputs[2]).data(), cout) += dy.colwise().sum();
  });
}

namespace {

// Normalizes `groups` channel groups per leading item over all other positions.
// Shared by group_norm (items = batch) and layer_norm (items = rows, groups = 1).
Var normalize(const Var& x, const Var& gamma, const Var& beta, int items, int groups, double eps) {
  const int c = last_dim(x.value());
  require(c % groups == 0, ErrorKind::kShapeMismatch,
          "norm: channels " + std::to_string(c) + " not divisible by groups " +
              std::to_string(groups));
  require(gamma.value().size() == static_cast<std::size_t>(c) &&
              beta.value().size() == static_cast<std::size_t>(c),
          ErrorKind::kShapeMismatch, "norm: affine parameter size");
  const int cg = c / groups;
  const std::size_t positions = x.value().size() / items / c;
  const double count = static_cast<double>(positions * cg);

  Tensor xhat(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(items) * groups);
  const double* in = x.value().data();
  for (int it = 0; it < items; ++it) {
    const std::size_t base = static_cast<std::size_t>(it) * positions * c;
    for (int gi = 0; gi < groups; ++gi) {
      double mean = 0.0;
      for (std::size_t p = 0; p < positions; ++p)
        for (int j = 0; j < cg; ++j) mean += in[base + p * c + gi * cg + j];
      mean /= count;
      double var = 0.0;
      for (std::size_t p = 0; p < positions; ++p)
        for (int j = 0; j < cg; ++j) {
          const double d = in[base + p * c + gi * cg + j] - mean;
          var += d * d;
        }
      var /= count;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[it * groups + gi] = is;
      for (std::size_t p = 0; p < positions; ++p)
        for (int j = 0; j < cg; ++j) {
          const std::size_t idx = base + p * c + gi * cg + j;
          xhat[idx] = (in[idx] - mean) * is;
        }
    }
  }
  Tensor out(x.shape());
  const std::size_t rows = out.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j)
      out[r * c + j] = xhat[r * c + j] * gamma.value()[j] + beta.value()[j];

  return make_result(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), items, groups, c, cg, positions,
       count](Node& self) {
        Node& xin = *self.inputs[0];
        Node& gin = *self.inputs[1];
        Node& bin = *self.inputs[2];
        const std::size_t rows = self.grad.size() / c;
        if (gin.requires_grad || bin.requires_grad) {
          Tensor& gg = grad_of(gin);
          Tensor& gb = grad_of(bin);
          for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j) {
              gg[j] += self.grad[r * c + j] * xhat[r * c + j];
              gb[j] += self.grad[r * c + j];
            }
        }
        if (!xin.requires_grad) return;
        Tensor& gx = grad_of(xin);
        const double* gamma_v = gin.value.data();
        for (int it = 0; it < items; ++it) {
          const std::size_t base = static_cast<std::size_t>(it) * positions * c;
          for (int gi = 0; gi < groups; ++gi) {
            double sum_d = 0.0;
            double sum_dx = 0.0;
            for (std::size_t p = 0; p < positions; ++p)
              for (int j = 0; j < cg; ++j) {
                const std::size_t idx = base + p * c + gi * cg + j;
                const double d = self.grad[idx] * gamma_v[gi * cg + j];
                sum_d += d;
                sum_dx += d * xhat[idx];
              }
            const double mean_d = sum_d / count;
            const double mean_dx = sum_dx / count;
            const double is = inv_std[it * groups + gi];
            for (std::size_t p = 0; p < positions; ++p)
              for (int j = 0; j < cg; ++j) {
                const std::size_t idx = base + p * c + gi * cg + j;
                const double d = self.grad[idx] * gamma_v[gi * cg + j];
                gx[idx] += is * (d - mean_d - xhat[idx] * mean_dx);
              }
          }
        }
      });
}

}  // namespace

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  return normalize(x, gamma, beta, x.value().dim(0), groups, eps);
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int c = last_dim(x.value());
  return normalize(x, gamma, beta, static_cast<int>(x.value().size() / c), 1, eps);
}

Var concat(std::span<const Var> parts, int axis) {
  require(!parts.empty(), ErrorKind::kShapeMismatch, "concat of zero parts");
  const Shape& first = parts[0].shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, ErrorKind::kShapeMismatch, "concat: axis out of range");
  std::size_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= first[i];
  std::vector<std::size_t> inner(parts.size());
  Shape shape = first;
  shape[axis] = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    bool ok = static_cast<int>(s.size()) == rank;
    for (int i = 0; ok && i < rank; ++i)
      if (i != axis && s[i] != first[i]) ok = false;
    require(ok, ErrorKind::kShapeMismatch,
            "concat: part " + shape_str(s) + " incompatible with " + shape_str(first) +
                " along axis " + std::to_string(axis));
    shape[axis] += s[axis];
    inner[p] = parts[p].value().size() / outer;
  }
  Tensor out(shape);
  const std::size_t total_inner = out.size() / outer;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].value().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * inner[p], src + (o + 1) * inner[p], out.data() + o * total_inner + offset);
    offset += inner[p];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(inputs),
                     [inner, outer, total_inner](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                         Node& in = *self.inputs[p];
                         if (in.requires_grad) {
                           Tensor& g = grad_of(in);
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t i = 0; i < inner[p]; ++i)
                               g[o * inner[p] + i] += self.grad[o * total_inner + offset + i];
                         }
                         offset += inner[p];
                       }
                     });
}

Var slice_last(const Var& x, int start, int len) {
  const int c = last_dim(x.value());
  require(start >= 0 && len > 0 && start + len <= c, ErrorKind::kShapeMismatch,
          "slice_last: range out of bounds");
  Shape shape = x.shape();
  shape.back() = len;
  Tensor out(shape);
  const std::size_t rows = x.value().size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < len; ++j) out[r * len + j] = x.value()[r * c + start + j];
  return make_result(std::move(out), {x}, [rows, c, start, len](Node& self) {
    Tensor& g = grad_of(*self.inputs[0]);
    for (std::size_t r = 0; r < rows; ++r)
      for (int j = 0; j < len; ++j) g[r * c + start + j] += self.grad[r * len + j];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var upsample_nearest2x(const Var& x) {
  require(x.value().rank() == 4, ErrorKind::kShapeMismatch, "upsample: input must be NHWC");
  const int n = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2),
            c = x.value().dim(3);
  Tensor out({n, 2 * h, 2 * w, c});
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        for (int j = 0; j < c; ++j) out.at(b, y, xx, j) = x.value().at(b, y / 2, xx / 2, j);
  return make_result(std::move(out), {x}, [n, h, w, c](Node& self) {
    Tensor& g = grad_of(*self.inputs[0]);
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          for (int j = 0; j < c; ++j) g.at(b, y / 2, xx / 2, j) += self.grad.at(b, y, xx, j);
  });
}

Var expand_batch(const Var& x, int n) {
  Shape shape = x.shape();
  shape.insert(shape.begin(), n);
  Tensor out(shape);
  const std::size_t per = x.value().size();
  for (int i = 0; i < n; ++i) std::copy(x.value().vec().begin(), x.value().vec().end(), out.data() + i * per);
  return make_result(std::move(out), {x}, [n, per](Node& self) {
    Tensor& g = grad_of(*self.inputs[0]);
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < per; ++j) g[j] += self.grad[i * per + j];
  });
}

Var where_batch(const Var& x, const Var& alt, const std::vector<bool>& use_alt) {
  const int n = x.value().dim(0);
  require(static_cast<int>(use_alt.size()) == n, ErrorKind::kShapeMismatch,
          "where_batch: selector size");
  const std::size_t per = x.value().size() / n;
  require(alt.value().size() == per, ErrorKind::kShapeMismatch,
          "where_batch: alternative " + shape_str(alt.shape()) + " vs " + shape_str(x.shape()));
  Tensor out = x.value();
  for (int i = 0; i < n; ++i)
    if (use_alt[i]) std::copy(alt.value().vec().begin(), alt.value().vec().end(), out.data() + i * per);
  return make_result(std::move(out), {x, alt}, [use_alt, n, per](Node& self) {
    Node& xin = *self.inputs[0];
    Node& ain = *self.inputs[1];
    for (int i = 0; i < n; ++i) {
      Node& dst = use_alt[i] ? ain : xin;
      if (!dst.requires_grad) continue;
      Tensor& g = grad_of(dst);
      const std::size_t off = use_alt[i] ? 0 : i * per;
      for (std::size_t j = 0; j < per; ++j) g[off + j] += self.grad[i * per + j];
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, Tensor* probs) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require(qv.rank() == 3 && kv.rank() == 3 && vv.rank() == 3, ErrorKind::kShapeMismatch,
          "attention: inputs must be [N, L, D]");
  const int n = qv.dim(0), lq = qv.dim(1), d = qv.dim(2), lk = kv.dim(1);
  require(kv.dim(0) == n && vv.dim(0) == n && kv.dim(2) == d && vv.shape() == kv.shape(),
          ErrorKind::kShapeMismatch,
          "attention: width mismatch q" + shape_str(qv.shape()) + " k" + shape_str(kv.shape()) +
              " v" + shape_str(vv.shape()));
  require(heads > 0 && d % heads == 0, ErrorKind::kShapeMismatch,
          "attention: width not divisible by heads");
  const int dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor p({n, heads, lq, lk});
  Tensor out({n, lq, d});
  for (int b = 0; b < n; ++b)
    for (int h = 0; h < heads; ++h) {
      ConstStridedMap qh(qv.data() + static_cast<std::size_t>(b) * lq * d + h * dh, lq, dh,
                         Eigen::OuterStride<>(d));
      ConstStridedMap kh(kv.data() + static_cast<std::size_t>(b) * lk * d + h * dh, lk, dh,
                         Eigen::OuterStride<>(d));
      ConstStridedMap vh(vv.data() + static_cast<std::size_t>(b) * lk * d + h * dh, lk, dh,
                         Eigen::OuterStride<>(d));
      MatMap ph(p.data() + (static_cast<std::size_t>(b) * heads + h) * lq * lk, lq, lk);
      ph.noalias() = (qh * kh.transpose()) * sc;
      for (int i = 0; i < lq; ++i) {
        auto row = ph.row(i);
        const double m = row.maxCoeff();
        row = (row.array() - m).exp();
        row /= row.sum();
      }
      StridedMap oh(out.data() + static_cast<std::size_t>(b) * lq * d + h * dh, lq, dh,
                    Eigen::OuterStride<>(d));
      oh.noalias() = ph * vh;
    }
  if (probs) *probs = p;
  return make_result(
      std::move(out), {q, k, v},
      [p = std::move(p), n, heads, lq, lk, d, dh, sc](Node& self) {
        Node& qn = *self.inputs[0];
        Node& kn = *self.inputs[1];
        Node& vn = *self.inputs[2];
        double* gq = qn.requires_grad ? grad_of(qn).data() : nullptr;
        double* gk = kn.requires_grad ? grad_of(kn).data() : nullptr;
        double* gv = vn.requires_grad ? grad_of(vn).data() : nullptr;
        RowMat dp(lq, lk);
        for (int b = 0; b < n; ++b)
          for (int h = 0; h < heads; ++h) {
            const std::size_t qoff = static_cast<std::size_t>(b) * lq * d + h * dh;
            const std::size_t koff = static_cast<std::size_t>(b) * lk * d + h * dh;
            const Eigen::OuterStride<> st(d);
            ConstStridedMap doh(self.grad.data() + qoff, lq, dh, st);
            ConstStridedMap qh(qn.value.data() + qoff, lq, dh, st);
            ConstStridedMap kh(kn.value.data() + koff, lk, dh, st);
            ConstStridedMap vh(vn.value.data() + koff, lk, dh, st);
            ConstMatMap ph(p.data() + (static_cast<std::size_t>(b) * heads + h) * lq * lk, lq, lk);
            if (gv) StridedMap(gv + koff, lk, dh, st).noalias() += ph.transpose() * doh;
            dp.noalias() = doh * vh.transpose();
            for (int i = 0; i < lq; ++i) {
              const double dot = ph.row(i).dot(dp.row(i));
              dp.row(i) = (ph.row(i).array() * (dp.row(i).array() - dot)).matrix();
            }
            if (gq) StridedMap(gq + qoff, lq, dh, st).noalias() += (dp * kh) * sc;
            if (gk) StridedMap(gk + koff, lk, dh, st).noalias() += (dp.transpose() * qh) * sc;
          }
      });
}

double mean_squared_error(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

Var mse(const Var& pred, const Tensor& target) {
  require_same_shape(pred.value(), target, "mse");
  Tensor out(Shape{}, {mean_squared_error(pred.value().span(), target.span())});
  return make_result(std::move(out), {pred}, [target](Node& self) {
    Node& in = *self.inputs[0];
    Tensor& g = grad_of(in);
    const double f = 2.0 * self.grad[0] / static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * (in.value[i] - target[i]);
  });
}

Var gaussian_kl(const Var& mean, const Var& logvar) {
  check_same(mean, logvar, "gaussian_kl");
  const int n = mean.value().dim(0);
  double s = 0.0;
  for (std::size_t i = 0; i < mean.value().size(); ++i) {
    const double m = mean.value()[i];
    const double lv = logvar.value()[i];
    s += m * m + std::exp(lv) - 1.0 - lv;
  }
  Tensor out(Shape{}, {0.5 * s / n});
  return make_result(std::move(out), {mean, logvar}, [n](Node& self) {
    Node& mn = *self.inputs[0];
    Node& ln = *self.inputs[1];
    const double f = self.grad[0] / n;
    if (mn.requires_grad) {
      Tensor& g = grad_of(mn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * mn.value[i];
    }
    if (ln.requires_grad) {
      Tensor& g = grad_of(ln);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * 0.5 * (std::exp(ln.value[i]) - 1.0);
    }
  });
}

}  // namespace vtryon::ag
