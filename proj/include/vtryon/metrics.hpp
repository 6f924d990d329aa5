// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// SSIM, LPIPS-style distance, FID and KID with a pluggable feature embedder.
// Scores from the default embedder are only comparable with each other.

#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "vtryon/conditioning.hpp"

namespace vtryon::metrics {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 2.0;
};

// Means over valid window positions and channels of the three SSIM factors
// (structure uses C3 = C2 / 2), and of their product.
struct SsimTerms {
  double luminance = 0.0;
  double contrast = 0.0;
  double structure = 0.0;
  double ssim = 0.0;
};

// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_window(int size, double sigma);

// Images (H, W, C) in [-1, 1]; windows are fully inside the image.
SsimTerms ssim_terms(const Tensor& a, const Tensor& b, const SsimParams& p = {});
double ssim(const Tensor& a, const Tensor& b, const SsimParams& p = {});

// Maps an image (H, W, 3) to layer-wise feature grids and a global embedding.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<Tensor> layers(const Tensor& image) const = 0;
  virtual Tensor embed(const Tensor& image) const = 0;
  virtual std::string id() const = 0;
};

// Default embedder: the frozen conditioning encoder. Layers are its
// activations; the embedding is the spatial mean of the last layer.
class EncoderEmbedder : public Embedder {
 public:
  explicit EncoderEmbedder(cond::FrozenEncoder encoder) : encoder_(std::move(encoder)) {}
  std::vector<Tensor> layers(const Tensor& image) const override;
  Tensor embed(const Tensor& image) const override;
  std::string id() const override;

 private:
  cond::FrozenEncoder encoder_;
};

// Sum over layers of the mean over positions of the squared distance between
// channel-unit-normalized feature vectors.
double lpips(const Tensor& a, const Tensor& b, const Embedder& embedder);
double lpips_from_layers(const std::vector<Tensor>& a, const std::vector<Tensor>& b);

struct FeatureSet {
  Eigen::MatrixXd features;  // m x k
  std::string embedder_id;
};

FeatureSet embed_images(const std::vector<Tensor>& images, const Embedder& embedder);

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased
};

GaussianStats feature_stats(const Eigen::MatrixXd& features);

inline constexpr double kEigenClamp = 1e-10;

// Frechet distance between Gaussians, clamped to >= 0.
double fid_from_stats(const GaussianStats& x, const GaussianStats& y);
double fid(const FeatureSet& x, const FeatureSet& y);

struct KidParams {
  int subset_size = 100;  // clipped to min(mx, my)
  int num_subsets = 100;
  std::uint64_t seed = 0;
};

double poly_kernel(const Eigen::VectorXd& u, const Eigen::VectorXd& v);
// Unbiased MMD^2 with the cubic polynomial kernel.
double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
// Mean subset MMD^2, times 100.
double kid(const FeatureSet& x, const FeatureSet& y, const KidParams& p = {});

enum class EvalMode { kPaired, kUnpaired };
EvalMode parse_eval_mode(const std::string& s);
std::string to_string(EvalMode m);

struct MetricReport {
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
  double lpips = kUnset, ssim = kUnset;
  double fid_p = kUnset, kid_p = kUnset, fid_u = kUnset, kid_u = kUnset;
  int num_paired = 0, num_unpaired = 0, num_reference = 0;
  std::string embedder_id;
  int kid_subset_size = 0, kid_num_subsets = 0;
  std::uint64_t seed = 0;
};

// Generated images are read from <generated>/tryon/<stem>.png (or
// <generated>/<stem>.png); references from <reference>/tryon/<stem>.png,
// falling back to <reference>/person/<stem>.png. Paired mode fills
// lpips/ssim/fid_p/kid_p; unpaired mode fills fid_u/kid_u. Results are merged
// into `report`.
void evaluate(const std::filesystem::path& generated, const std::filesystem::path& reference,
              EvalMode mode, const Embedder& embedder, const KidParams& kid_params,
              MetricReport& report);
MetricReport evaluate(const std::filesystem::path& generated,
                      const std::filesystem::path& reference, EvalMode mode,
                      const Embedder& embedder, const KidParams& kid_params = {});

std::string report_json(const MetricReport& r);
std::string report_flat(const MetricReport& r);
void write_report(const MetricReport& r, const std::filesystem::path& json_path,
                  const std::filesystem::path& flat_path);

}  // namespace vtryon::metrics
