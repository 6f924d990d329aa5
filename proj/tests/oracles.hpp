// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Plain-loop reference implementations shared by the unit and acceptance tests.

#pragma once

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <vector>

#include "vtryon/diffusion.hpp"
#include "vtryon/tensor.hpp"

namespace vtryon::oracle {

// Perfect denoiser for a known clean latent: recovers the noise exactly from
// any point on the (z0, eps) line.
inline diffusion::Denoiser perfect_denoiser(const Tensor& z0, const diffusion::NoiseSchedule& sched) {
  return [z0, sched](const Tensor& z, int t, diffusion::Branch) {
    const double a = std::sqrt(sched.alpha_bar(t));
    const double s = std::sqrt(1.0 - sched.alpha_bar(t));
    Tensor eps(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) eps[i] = (z[i] - a * z0[i]) / s;
    return eps;
  };
}

// Nonlinear stand-in model with distinct branches.
inline diffusion::Denoiser toy_model() {
  return [](const Tensor& z, int t, diffusion::Branch b) {
    Tensor out(z.shape());
    const double shift = b == diffusion::Branch::kConditional ? 0.3 : -0.2;
    for (std::size_t i = 0; i < z.size(); ++i)
      out[i] = std::tanh(z[i] * 0.7 + shift) + 0.001 * t + 0.01 * static_cast<double>(i);
    return out;
  };
}

// Direct 2-D windowed sums at every valid position.
inline double naive_ssim(const Tensor& a, const Tensor& b) {
  const int win = 11;
  const double sigma = 1.5;
  std::vector<double> g(win);
  double gs = 0.0;
  for (int i = 0; i < win; ++i) {
    const double x = i - (win - 1) / 2.0;
    g[i] = std::exp(-x * x / (2 * sigma * sigma));
    gs += g[i];
  }
  for (double& v : g) v /= gs;
  const double c1 = (0.01 * 2.0) * (0.01 * 2.0), c2 = (0.03 * 2.0) * (0.03 * 2.0);
  const int h = a.dim(0), w = a.dim(1), ch = a.dim(2);
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < ch; ++c)
    for (int y = 0; y + win <= h; ++y)
      for (int x = 0; x + win <= w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double wt = g[i] * g[j];
            const double va = a.at(y + i, x + j, c), vb = b.at(y + i, x + j, c);
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / count;
}

inline double naive_lpips(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    const int h = a[l].dim(0), w = a[l].dim(1), c = a[l].dim(2);
    double layer = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double nu = 0, nv = 0;
        for (int k = 0; k < c; ++k) {
          nu += a[l].at(y, x, k) * a[l].at(y, x, k);
          nv += b[l].at(y, x, k) * b[l].at(y, x, k);
        }
        nu = std::sqrt(nu) + 1e-10;
        nv = std::sqrt(nv) + 1e-10;
        for (int k = 0; k < c; ++k) {
          const double d = a[l].at(y, x, k) / nu - b[l].at(y, x, k) / nv;
          layer += d * d;
        }
      }
    total += layer / (h * w);
  }
  return total;
}

inline double naive_fid(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  auto stats = [](const Eigen::MatrixXd& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    const int m = f.rows(), k = f.cols();
    mu = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) mu(j) += f(i, j) / m;
    cov = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p)
        for (int q = 0; q < k; ++q) cov(p, q) += (f(i, p) - mu(p)) * (f(i, q) - mu(q)) / (m - 1);
  };
  Eigen::VectorXd mx, my;
  Eigen::MatrixXd cx, cy;
  stats(x, mx, cx);
  stats(y, my, cy);
  // Eigenvalues of the non-symmetric product are those of its square root squared.
  Eigen::EigenSolver<Eigen::MatrixXd> es(cx * cy);
  double tr_sqrt = 0.0;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    tr_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()(i).real()));
  return (mx - my).squaredNorm() + cx.trace() + cy.trace() - 2.0 * tr_sqrt;
}

inline double naive_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const int m = x.rows(), n = y.rows(), k = x.cols();
  auto kern = [k](const Eigen::MatrixXd& a, int i, const Eigen::MatrixXd& b, int j) {
    double dot = 0.0;
    for (int d = 0; d < k; ++d) dot += a(i, d) * b(j, d);
    return std::pow(dot / k + 1.0, 3);
  };
  double xx = 0, yy = 0, xy = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) xx += kern(x, i, x, j);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) yy += kern(y, i, y, j);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) xy += kern(x, i, y, j);
  return xx / (m * (m - 1.0)) + yy / (n * (n - 1.0)) - 2.0 * xy / (m * n);
}

}  // namespace vtryon::oracle
