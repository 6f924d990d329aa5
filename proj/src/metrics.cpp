// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "vtryon/error.hpp"
#include "vtryon/image_io.hpp"

namespace vtryon::metrics {

namespace fs = std::filesystem;

std::vector<double> gaussian_window(int size, double sigma) {
  require(size >= 1 && sigma > 0.0, ErrorKind::kInvalidConfig, "bad Gaussian window");
  std::vector<double> w(size);
  const double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) w[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= s;
  return w;
}

namespace {

// Separable valid-mode filtering of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                 const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int ho = h - k + 1, wo = w - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += g[j] * plane[static_cast<std::size_t>(y) * w + x + j];
      tmp[static_cast<std::size_t>(y) * wo + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ho) * wo, 0.0);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += g[j] * tmp[static_cast<std::size_t>(y + j) * wo + x];
      out[static_cast<std::size_t>(y) * wo + x] = s;
    }
  return out;
}

}  // namespace

SsimTerms ssim_terms(const Tensor& a, const Tensor& b, const SsimParams& p) {
  require_same_shape(a, b, "ssim");
  require(a.rank() == 3, ErrorKind::kShapeMismatch, "ssim expects (H, W, C) images");
  const int h = a.dim(0), w = a.dim(1), ch = a.dim(2);
  require(p.window <= h && p.window <= w, ErrorKind::kInvalidRange,
          "ssim window " + std::to_string(p.window) + " larger than image " + shape_str(a.shape()));
  const std::vector<double> g = gaussian_window(p.window, p.sigma);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const double c3 = c2 / 2.0;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  SsimTerms t;
  std::size_t count = 0;
  for (int c = 0; c < ch; ++c) {
    std::vector<double> x(hw), y(hw), xx(hw), yy(hw), xy(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      x[i] = a[i * ch + c];
      y[i] = b[i * ch + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g),
               sxy = filter_valid(xy, h, w, g);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = std::max(0.0, sxx[i] - mx[i] * mx[i]);
      const double vy = std::max(0.0, syy[i] - my[i] * my[i]);
      const double cov = sxy[i] - mx[i] * my[i];
      const double sx = std::sqrt(vx), sy = std::sqrt(vy);
      const double l = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
      const double con = (2.0 * sx * sy + c2) / (vx + vy + c2);
      const double s = (cov + c3) / (sx * sy + c3);
      t.luminance += l;
      t.contrast += con;
      t.structure += s;
      t.ssim += (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2) /
                ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  const double n = static_cast<double>(count);
  t.luminance /= n;
  t.contrast /= n;
  t.structure /= n;
  t.ssim /= n;
  return t;
}

double ssim(const Tensor& a, const Tensor& b, const SsimParams& p) { return ssim_terms(a, b, p).ssim; }

std::vector<Tensor> EncoderEmbedder::layers(const Tensor& image) const {
  require(image.rank() == 3, ErrorKind::kShapeMismatch, "embedder expects (H, W, C)");
  const Tensor x = cond::to_rgb(image);
  ag::NoGradGuard guard;
  std::vector<Tensor> out;
  for (const auto& v : encoder_.layers(ag::Var::constant(x.reshaped({1, x.dim(0), x.dim(1), 3}))))
    out.push_back(v.value().reshaped({v.value().dim(1), v.value().dim(2), v.value().dim(3)}));
  return out;
}

Tensor EncoderEmbedder::embed(const Tensor& image) const {
  const Tensor last = layers(image).back();
  const int k = last.dim(2);
  Tensor e({k}, 0.0);
  const std::size_t positions = last.size() / k;
  for (std::size_t p = 0; p < positions; ++p)
    for (int c = 0; c < k; ++c) e[c] += last[p * k + c];
  for (int c = 0; c < k; ++c) e[c] /= static_cast<double>(positions);
  return e;
}

std::string EncoderEmbedder::id() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frozen-encoder-%016llx",
                static_cast<unsigned long long>(encoder_.weights_hash()));
  return buf;
}

double lpips_from_layers(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  require(!a.empty() && a.size() == b.size(), ErrorKind::kShapeMismatch,
          "embedder contract: layer counts differ or are zero");
  constexpr double kEps = 1e-10;
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    require(a[l].shape() == b[l].shape() && a[l].rank() == 3, ErrorKind::kShapeMismatch,
            "embedder contract: layer " + std::to_string(l) + " shapes " + shape_str(a[l].shape()) +
                " vs " + shape_str(b[l].shape()));
    require(a[l].all_finite() && b[l].all_finite(), ErrorKind::kNonFinite,
            "embedder contract: non-finite features");
    const int c = a[l].dim(2);
    const std::size_t positions = a[l].size() / c;
    double layer = 0.0;
    for (std::size_t p = 0; p < positions; ++p) {
      const double* u = a[l].data() + p * c;
      const double* v = b[l].data() + p * c;
      double nu = 0.0, nv = 0.0;
      for (int k = 0; k < c; ++k) {
        nu += u[k] * u[k];
        nv += v[k] * v[k];
      }
      nu = std::sqrt(nu) + kEps;
      nv = std::sqrt(nv) + kEps;
      double d = 0.0;
      for (int k = 0; k < c; ++k) {
        const double diff = u[k] / nu - v[k] / nv;
        d += diff * diff;
      }
      layer += d;
    }
    total += layer / static_cast<double>(positions);
  }
  return total;
}

double lpips(const Tensor& a, const Tensor& b, const Embedder& embedder) {
  require_same_shape(a, b, "lpips");
  return lpips_from_layers(embedder.layers(a), embedder.layers(b));
}

FeatureSet embed_images(const std::vector<Tensor>& images, const Embedder& embedder) {
  require(!images.empty(), ErrorKind::kEmptyDataset, "no images to embed");
  FeatureSet fs;
  fs.embedder_id = embedder.id();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor e = embedder.embed(images[i]);
    if (i == 0) fs.features.resize(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(e.size()));
    require(static_cast<Eigen::Index>(e.size()) == fs.features.cols(), ErrorKind::kShapeMismatch,
            "embedder returned embeddings of different widths");
    for (std::size_t k = 0; k < e.size(); ++k) fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = e[k];
  }
  return fs;
}

GaussianStats feature_stats(const Eigen::MatrixXd& f) {
  require(f.rows() >= 2, ErrorKind::kDegenerateInput,
          "need at least 2 samples, got " + std::to_string(f.rows()));
  require(f.allFinite(), ErrorKind::kNonFinite, "non-finite features");
  GaussianStats s;
  s.mean = f.colwise().mean().transpose();
  const Eigen::MatrixXd centered = f.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(f.rows() - 1);
  return s;
}

double fid_from_stats(const GaussianStats& x, const GaussianStats& y) {
  require(x.mean.size() == y.mean.size() && x.cov.rows() == y.cov.rows(),
          ErrorKind::kShapeMismatch, "fid: feature dimensions differ");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ex(x.cov);
  const Eigen::VectorXd lx = ex.eigenvalues().unaryExpr(
      [](double v) { return v < kEigenClamp ? 0.0 : std::sqrt(v); });
  const Eigen::MatrixXd sx = ex.eigenvectors() * lx.asDiagonal() * ex.eigenvectors().transpose();
  Eigen::MatrixXd m = sx * y.cov * sx;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < em.eigenvalues().size(); ++i) {
    const double v = em.eigenvalues()(i);
    if (v > kEigenClamp) tr_sqrt += std::sqrt(v);
  }
  const double d = (x.mean - y.mean).squaredNorm() + x.cov.trace() + y.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

namespace {

void check_pair(const FeatureSet& x, const FeatureSet& y) {
  require(x.features.cols() == y.features.cols(), ErrorKind::kShapeMismatch,
          "feature widths differ: " + std::to_string(x.features.cols()) + " vs " +
              std::to_string(y.features.cols()));
  require(x.embedder_id == y.embedder_id, ErrorKind::kInvalidConfig,
          "feature sets from different embedders: " + x.embedder_id + " vs " + y.embedder_id);
}

}  // namespace

double fid(const FeatureSet& x, const FeatureSet& y) {
  check_pair(x, y);
  return fid_from_stats(feature_stats(x.features), feature_stats(y.features));
}

double poly_kernel(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  const double s = u.dot(v) / static_cast<double>(u.size()) + 1.0;
  return s * s * s;
}

double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  require(x.rows() >= 2 && y.rows() >= 2, ErrorKind::kDegenerateInput,
          "mmd needs at least 2 samples per set");
  require(x.cols() == y.cols(), ErrorKind::kShapeMismatch, "mmd: feature widths differ");
  const double k = static_cast<double>(x.cols());
  auto kernel = [k](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd g = (a * b.transpose()).array() / k + 1.0;
    return Eigen::MatrixXd(g.array().cube());
  };
  const double m = static_cast<double>(x.rows()), n = static_cast<double>(y.rows());
  const Eigen::MatrixXd kxx = kernel(x, x), kyy = kernel(y, y), kxy = kernel(x, y);
  const double sxx = kxx.sum() - kxx.diagonal().sum();
  const double syy = kyy.sum() - kyy.diagonal().sum();
  return sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * kxy.sum() / (m * n);
}

double kid(const FeatureSet& x, const FeatureSet& y, const KidParams& p) {
  check_pair(x, y);
  const int mx = static_cast<int>(x.features.rows()), my = static_cast<int>(y.features.rows());
  require(p.num_subsets >= 1, ErrorKind::kInvalidConfig, "kid needs at least one subset");
  const int s = std::min({p.subset_size, mx, my});
  require(s >= 2, ErrorKind::kInvalidRange,
          "kid subset size " + std::to_string(s) + " must be >= 2 and <= set sizes");
  Rng rng(p.seed);
  auto pick = [&](const Eigen::MatrixXd& f) {
    std::vector<int> idx(f.rows());
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < s; ++i) std::swap(idx[i], idx[rng.uniform_int(i, static_cast<int>(idx.size()) - 1)]);
    Eigen::MatrixXd out(s, f.cols());
    for (int i = 0; i < s; ++i) out.row(i) = f.row(idx[i]);
    return out;
  };
  double total = 0.0;
  for (int i = 0; i < p.num_subsets; ++i) {
    const Eigen::MatrixXd a = pick(x.features);
    const Eigen::MatrixXd b = pick(y.features);
    total += mmd2_unbiased(a, b);
  }
  return 100.0 * total / p.num_subsets;
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "paired") return EvalMode::kPaired;
  if (s == "unpaired") return EvalMode::kUnpaired;
  raise(ErrorKind::kInvalidConfig, "unknown eval mode '" + s + "'");
}

std::string to_string(EvalMode m) { return m == EvalMode::kPaired ? "paired" : "unpaired"; }

namespace {

std::vector<std::string> png_stems(const fs::path& dir) {
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());
  return stems;
}

fs::path generated_root(const fs::path& g) {
  require(fs::is_directory(g), ErrorKind::kLayout, "missing directory " + g.string());
  return fs::is_directory(g / "tryon") ? g / "tryon" : g;
}

fs::path reference_file(const fs::path& ref, const std::string& stem) {
  const fs::path t = ref / "tryon" / (stem + ".png");
  if (fs::exists(t)) return t;
  return ref / "person" / (stem + ".png");
}

}  // namespace

void evaluate(const fs::path& generated, const fs::path& reference, EvalMode mode,
              const Embedder& embedder, const KidParams& kid_params, MetricReport& r) {
  const fs::path groot = generated_root(generated);
  require(fs::is_directory(reference), ErrorKind::kLayout, "missing directory " + reference.string());
  const std::vector<std::string> stems = png_stems(groot);
  require(stems.size() >= 2, ErrorKind::kEmptyDataset,
          "need at least 2 generated images in " + groot.string());
  std::vector<std::string> missing;
  for (const auto& s : stems)
    if (!fs::exists(reference_file(reference, s))) missing.push_back(reference_file(reference, s).string());
  if (!missing.empty()) {
    std::string msg = "no reference image for:";
    for (const auto& m : missing) msg += " " + m;
    raise(ErrorKind::kLayout, msg);
  }
  std::vector<Tensor> gen, ref;
  for (const auto& s : stems) {
    gen.push_back(to_signed_unit(read_png(groot / (s + ".png"), 3)));
    ref.push_back(to_signed_unit(read_png(reference_file(reference, s), 3)));
    require(gen.back().shape() == ref.back().shape(), ErrorKind::kShapeMismatch,
            "generated and reference sizes differ for " + s);
  }
  const FeatureSet fg = embed_images(gen, embedder), fr = embed_images(ref, embedder);
  r.embedder_id = embedder.id();
  r.num_reference = static_cast<int>(ref.size());
  r.kid_subset_size = std::min({kid_params.subset_size, static_cast<int>(gen.size()),
                                static_cast<int>(ref.size())});
  r.kid_num_subsets = kid_params.num_subsets;
  r.seed = kid_params.seed;
  if (mode == EvalMode::kPaired) {
    double s = 0.0, l = 0.0;
    for (std::size_t i = 0; i < gen.size(); ++i) {
      s += ssim(gen[i], ref[i]);
      l += lpips(gen[i], ref[i], embedder);
    }
    r.ssim = s / static_cast<double>(gen.size());
    r.lpips = l / static_cast<double>(gen.size());
    r.fid_p = fid(fg, fr);
    r.kid_p = kid(fg, fr, kid_params);
    r.num_paired = static_cast<int>(gen.size());
  } else {
    r.fid_u = fid(fg, fr);
    r.kid_u = kid(fg, fr, kid_params);
    r.num_unpaired = static_cast<int>(gen.size());
  }
}

MetricReport evaluate(const fs::path& generated, const fs::path& reference, EvalMode mode,
                      const Embedder& embedder, const KidParams& kid_params) {
  MetricReport r;
  evaluate(generated, reference, mode, embedder, kid_params, r);
  return r;
}

namespace {

nlohmann::ordered_json num(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

std::string report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["lpips"] = num(r.lpips);
  j["ssim"] = num(r.ssim);
  j["fid_p"] = num(r.fid_p);
  j["kid_p"] = num(r.kid_p);
  j["fid_u"] = num(r.fid_u);
  j["kid_u"] = num(r.kid_u);
  j["counts"] = {{"paired", r.num_paired}, {"unpaired", r.num_unpaired}, {"reference", r.num_reference}};
  j["config"] = {{"embedder_id", r.embedder_id},
                 {"kid_scale", 100},
                 {"kid_subset_size", r.kid_subset_size},
                 {"kid_num_subsets", r.kid_num_subsets},
                 {"seed", r.seed}};
  return j.dump(2) + "\n";
}

std::string report_flat(const MetricReport& r) {
  std::string out;
  char buf[128];
  auto put = [&](const char* k, double v) {
    if (std::isnan(v))
      std::snprintf(buf, sizeof buf, "%s = nan\n", k);
    else
      std::snprintf(buf, sizeof buf, "%s = %.17g\n", k, v);
    out += buf;
  };
  put("lpips", r.lpips);
  put("ssim", r.ssim);
  put("fid_p", r.fid_p);
  put("kid_p", r.kid_p);
  put("fid_u", r.fid_u);
  put("kid_u", r.kid_u);
  out += "num_paired = " + std::to_string(r.num_paired) + "\n";
  out += "num_unpaired = " + std::to_string(r.num_unpaired) + "\n";
  out += "num_reference = " + std::to_string(r.num_reference) + "\n";
  out += "embedder_id = " + r.embedder_id + "\n";
  out += "kid_subset_size = " + std::to_string(r.kid_subset_size) + "\n";
  out += "kid_num_subsets = " + std::to_string(r.kid_num_subsets) + "\n";
  out += "seed = " + std::to_string(r.seed) + "\n";
  return out;
}

void write_report(const MetricReport& r, const fs::path& json_path, const fs::path& flat_path) {
  for (const auto& [path, text] : {std::pair{json_path, report_json(r)}, std::pair{flat_path, report_flat(r)}}) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrorKind::kIo, "cannot write " + path.string());
    os << text;
  }
}

}  // namespace vtryon::metrics
