// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "vtryon/error.hpp"
#include "vtryon/rng.hpp"

namespace vtryon::synth {

namespace fs = std::filesystem;

namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr std::array<Rgb, 12> kPalette{{
    {200, 30, 40},  {30, 90, 200},  {40, 160, 70},  {240, 200, 40},
    {120, 40, 160}, {250, 130, 30}, {20, 20, 30},   {230, 230, 220},
    {0, 150, 160},  {150, 90, 50},  {240, 120, 170}, {90, 100, 110},
}};
constexpr std::array<Rgb, 4> kSkin{{{241, 194, 160}, {224, 172, 125}, {170, 120, 85}, {110, 75, 50}}};
constexpr Rgb kHair{45, 30, 25};

// Garment and body dimensions in the flat-garment frame, relative to the
// garment centre.
struct Frame {
  double half_w, half_h, sleeve_w, sleeve_h, neck_r, arm_w, leg_h, neck_w, neck_h, head_r;
  int center_y, center_x;

  explicit Frame(const SceneParams& p)
      : half_w(0.25 * p.width),
        half_h(0.2 * p.height),
        sleeve_w(0.1 * p.width),
        sleeve_h(0.1 * p.height),
        neck_r(0.07 * p.width),
        arm_w(0.09 * p.width),
        leg_h(0.3 * p.height),
        neck_w(0.05 * p.width),
        neck_h(0.06 * p.height),
        head_r(0.13 * p.width),
        center_y(static_cast<int>(std::lround(0.56 * p.height))),
        center_x(p.width / 2) {}

  bool garment(double uy, double ux) const {
    const double ax = std::abs(ux);
    if (uy < -half_h || uy > half_h) return false;
    const bool torso = ax <= half_w;
    const bool sleeve = ax > half_w && ax <= half_w + sleeve_w && uy <= -half_h + sleeve_h;
    if (!torso && !sleeve) return false;
    const double ny = uy + half_h;
    return ny * ny + ux * ux >= neck_r * neck_r;
  }
  bool arm(double uy, double ux) const {
    const double ax = std::abs(ux);
    return ax > half_w && ax <= half_w + arm_w && uy >= -half_h && uy <= half_h + 0.05 * leg_h;
  }
  bool leg(double uy, double ux) const {
    const double ax = std::abs(ux);
    return uy > half_h && uy <= half_h + leg_h && ax <= half_w - 1.0 && ax > 1.0;
  }
  bool neck(double uy, double ux) const {
    return std::abs(ux) <= neck_w && uy >= -half_h - neck_h && uy <= -half_h + 1.0;
  }
  double head_cy() const { return -half_h - neck_h - head_r; }
  bool head(double uy, double ux) const {
    const double dy = uy - head_cy();
    return dy * dy + ux * ux <= head_r * head_r;
  }
  bool hair(double uy, double ux, double hair_x) const {
    const double dy = uy - head_cy();
    const bool cap = dy * dy + ux * ux <= (head_r + 1.0) * (head_r + 1.0) && dy < -0.3 * head_r;
    const bool bar = std::abs(ux - hair_x) <= 2.5 && uy >= head_cy() && uy <= -0.5 * half_h;
    return cap || bar;
  }
};

struct Texture {
  TextureFamily family = TextureFamily::kSolid;
  Rgb primary{}, secondary{};
  int orientation = 0;
  int period = 4;
  int glyph = 0;
};

Texture draw_texture(const SceneParams& params, Rng& rng) {
  Texture t;
  t.family = params.families[rng.uniform_int(0, static_cast<int>(params.families.size()) - 1)];
  const int a = rng.uniform_int(0, static_cast<int>(kPalette.size()) - 1);
  int b = rng.uniform_int(0, static_cast<int>(kPalette.size()) - 2);
  if (b >= a) ++b;
  t.primary = kPalette[a];
  t.secondary = kPalette[b];
  t.orientation = rng.uniform_int(0, 2);
  t.period = rng.uniform_int(3, 8);
  t.glyph = rng.uniform_int(0, 3);
  return t;
}

Rgb texel(const Texture& t, const Frame& f, int y, int x) {
  switch (t.family) {
    case TextureFamily::kSolid:
      return t.primary;
    case TextureFamily::kStripes: {
      const int coord = t.orientation == 0 ? y : t.orientation == 1 ? x : x + y;
      return (coord % (2 * t.period)) < t.period ? t.primary : t.secondary;
    }
    case TextureFamily::kChecks:
      return ((y / t.period) + (x / t.period)) % 2 == 0 ? t.primary : t.secondary;
    case TextureFamily::kLogoGlyph: {
      const double gy = y - f.center_y + 0.15 * f.half_h;
      const double gx = x - f.center_x;
      const double r = 0.45 * f.half_w;
      bool in = false;
      switch (t.glyph) {
        case 0: in = std::abs(gy) <= r && std::abs(gx) <= r; break;
        case 1: in = gy * gy + gx * gx <= r * r; break;
        case 2: in = gy <= r && gy >= -r && std::abs(gx) <= (gy + r) * 0.5; break;
        default: in = (std::abs(gy) <= r && std::abs(gx) <= 0.35 * r) ||
                      (std::abs(gx) <= r && std::abs(gy) <= 0.35 * r);
      }
      return in ? t.secondary : t.primary;
    }
  }
  return t.primary;
}

// Flat garment raster on the garment background.
Image8 render_flat(const Texture& t, const Frame& f, const SceneParams& p) {
  Image8 img(p.height, p.width, 3);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      const Rgb c = f.garment(y - f.center_y, x - f.center_x) ? texel(t, f, y, x) : kGarmentBackground;
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
    }
  return img;
}

// Continuous garment-frame coordinate (relative to the garment centre) of a
// canvas pixel: undo rotation/scale, then the sinusoidal shear.
std::array<double, 2> body_coords(const Pose& pose, int y, int x) {
  const double dy = y - pose.center_y;
  const double dx = x - pose.center_x;
  const double c = std::cos(pose.rotation);
  const double s = std::sin(pose.rotation);
  const double uy = (-s * dx + c * dy) / pose.scale;
  double ux = (c * dx + s * dy) / pose.scale;
  ux -= pose.shear_amplitude * std::sin(2.0 * std::numbers::pi * uy / pose.shear_period);
  return {uy, ux};
}

void put(Image8& img, int y, int x, const Rgb& c) {
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
}

Rgb get(const Image8& img, int y, int x) {
  return {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
}

std::uint64_t fnv1a(const std::string& s) { return hash_bytes(s.data(), s.size()); }

std::string stem_for(int i) {
  std::ostringstream os;
  os.width(6);
  os.fill('0');
  os << i;
  return os.str();
}

}  // namespace

void validate(const SceneParams& p) {
  require(p.height >= 16 && p.width >= 16, ErrorKind::kInvalidConfig, "canvas too small");
  require(p.divisor >= 1 && p.height % p.divisor == 0 && p.width % p.divisor == 0,
          ErrorKind::kDivisibility,
          "canvas " + std::to_string(p.height) + "x" + std::to_string(p.width) +
              " not divisible by " + std::to_string(p.divisor));
  require(p.max_rotation_deg >= 0.0 && p.max_rotation_deg <= 45.0, ErrorKind::kInvalidConfig,
          "rotation range outside [0, 45] degrees");
  require(p.max_translation >= 0.0 && p.max_translation <= 0.25, ErrorKind::kInvalidConfig,
          "translation range outside [0, 0.25]");
  require(p.min_scale > 0.0 && p.min_scale <= p.max_scale && p.max_scale <= 1.5,
          ErrorKind::kInvalidConfig, "scale range invalid");
  require(p.max_shear >= 0.0 && p.max_shear <= 4.0, ErrorKind::kInvalidConfig,
          "shear amplitude outside [0, 4]");
  require(!p.families.empty(), ErrorKind::kInvalidConfig, "no texture families");
  require(p.occlusion_probability >= 0.0 && p.occlusion_probability <= 1.0,
          ErrorKind::kInvalidConfig, "occlusion probability outside [0, 1]");
}

std::array<int, 2> inverse_warp(const Pose& pose, const SceneParams& params, int y, int x) {
  const Frame f(params);
  const auto [uy, ux] = body_coords(pose, y, x);
  return {static_cast<int>(std::lround(uy)) + f.center_y,
          static_cast<int>(std::lround(ux)) + f.center_x};
}

RawSample gen_sample_raw(const SceneParams& params, std::uint64_t seed, const std::string& id) {
  validate(params);
  Rng rng(seed);
  const Frame f(params);
  const int H = params.height, W = params.width;

  Pose pose;
  const double ty = (2.0 * rng.uniform() - 1.0) * params.max_translation * H;
  const double tx = (2.0 * rng.uniform() - 1.0) * params.max_translation * W;
  const double rot = (2.0 * rng.uniform() - 1.0) * params.max_rotation_deg;
  const double sc = params.min_scale + rng.uniform() * (params.max_scale - params.min_scale);
  const double shear = (2.0 * rng.uniform() - 1.0) * params.max_shear;
  const double period = 12.0 + 12.0 * rng.uniform();
  pose.occluded = rng.uniform() < params.occlusion_probability;
  const double hair_x = (2.0 * rng.uniform() - 1.0) * 0.3 * f.half_w;
  if (params.identity_deformation) {
    pose.center_y = f.center_y + std::round(ty);
    pose.center_x = f.center_x + std::round(tx);
  } else {
    pose.center_y = f.center_y + ty;
    pose.center_x = f.center_x + tx;
    pose.rotation = rot * std::numbers::pi / 180.0;
    pose.scale = sc;
    pose.shear_amplitude = shear;
  }
  pose.shear_period = period;

  const Texture worn = draw_texture(params, rng);
  const Texture target = draw_texture(params, rng);
  const Rgb skin = kSkin[rng.uniform_int(0, static_cast<int>(kSkin.size()) - 1)];
  const Rgb pants = kPalette[rng.uniform_int(0, static_cast<int>(kPalette.size()) - 1)];

  RawSample out;
  out.id = id;
  out.pose = pose;
  out.cloth = render_flat(target, f, params);
  const Image8 worn_flat = render_flat(worn, f, params);

  out.person = Image8(H, W, 3);
  out.mask = Image8(H, W, 1, 0);
  out.warped = Image8(H, W, 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      put(out.warped, y, x, kGarmentBackground);
      const auto [uy, ux] = body_coords(pose, y, x);
      const int qy = static_cast<int>(std::lround(uy)) + f.center_y;
      const int qx = static_cast<int>(std::lround(ux)) + f.center_x;
      const bool in_garment = qy >= 0 && qy < H && qx >= 0 && qx < W &&
                              f.garment(qy - f.center_y, qx - f.center_x);
      Rgb c = kSceneBackground;
      if (f.leg(uy, ux)) c = pants;
      if (f.arm(uy, ux) || f.neck(uy, ux)) c = skin;
      bool garment_visible = false;
      if (in_garment) {
        c = get(worn_flat, qy, qx);
        garment_visible = true;
      }
      if (f.head(uy, ux)) {
        c = skin;
        garment_visible = false;
      }
      if (pose.occluded && f.hair(uy, ux, hair_x)) {
        c = kHair;
        garment_visible = false;
      }
      put(out.person, y, x, c);
      if (garment_visible) {
        out.mask.at(y, x, 0) = 255;
        put(out.warped, y, x, get(out.cloth, qy, qx));
      }
    }

  // Exact compositing: person outside the mask, warped garment inside.
  out.tryon = out.person;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (out.mask.at(y, x, 0) == 255) put(out.tryon, y, x, get(out.warped, y, x));
  return out;
}

Sample to_sample(const RawSample& raw) {
  Sample s;
  s.id = raw.id;
  s.cloth_id = raw.id;
  s.person = to_signed_unit(raw.person);
  s.cloth = to_signed_unit(raw.cloth);
  s.mask = to_signed_unit(raw.mask);
  s.warped_gt = to_signed_unit(raw.warped);
  s.tryon_gt = to_signed_unit(raw.tryon);
  s.has_warped = true;
  s.has_tryon = true;
  return s;
}

Sample gen_sample(const SceneParams& params, std::uint64_t seed, const std::string& id) {
  return to_sample(gen_sample_raw(params, seed, id));
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  raise(ErrorKind::kInvalidConfig, "unknown split '" + s + "'");
}

Pairing parse_pairing(const std::string& s) {
  if (s == "paired") return Pairing::kPaired;
  if (s == "unpaired") return Pairing::kUnpaired;
  raise(ErrorKind::kInvalidConfig, "unknown pairing '" + s + "'");
}

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split split_of(const std::string& id) { return fnv1a(id) % 10 == 0 ? Split::kTest : Split::kTrain; }

Manifest gen_dataset(int n, const SceneParams& params, std::uint64_t seed, const fs::path& out_dir) {
  require(n >= 1, ErrorKind::kInvalidConfig, "dataset size must be >= 1");
  validate(params);
  for (const char* sub : {"person", "cloth", "mask", "warped", "tryon"}) {
    std::error_code ec;
    fs::create_directories(out_dir / sub, ec);
    require(!ec, ErrorKind::kIo, "cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  Manifest m;
  for (int i = 0; i < n; ++i) {
    const std::string id = stem_for(i);
    const RawSample s = gen_sample_raw(params, derive_seed(seed, id), id);
    const std::string file = id + ".png";
    write_png(out_dir / "person" / file, s.person);
    write_png(out_dir / "cloth" / file, s.cloth);
    write_png(out_dir / "mask" / file, s.mask);
    write_png(out_dir / "warped" / file, s.warped);
    write_png(out_dir / "tryon" / file, s.tryon);
    m.ids.push_back(id);
    (split_of(id) == Split::kTrain ? m.train_ids : m.test_ids).push_back(id);
  }
  for (Split split : {Split::kTrain, Split::kTest}) {
    const fs::path path = out_dir / ("pairs_" + to_string(split) + ".txt");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrorKind::kIo, "cannot write " + path.string());
    for (const auto& id : split == Split::kTrain ? m.train_ids : m.test_ids)
      os << id << '\t' << id << '\n';
  }
  return m;
}

std::vector<int> derangement(int n, std::uint64_t seed) {
  require(n >= 2, ErrorKind::kInvalidConfig, "a derangement needs at least 2 items");
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(p[i], p[rng.uniform_int(0, i - 1)]);
  return p;
}

std::vector<std::pair<std::string, std::string>> read_pairs(const fs::path& dir, Split split) {
  const fs::path path = dir / ("pairs_" + to_string(split) + ".txt");
  std::ifstream is(path);
  require(is.good(), ErrorKind::kLayout, "missing pairs file " + path.string());
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos && tab > 0 && tab + 1 < line.size(), ErrorKind::kLayout,
            path.string() + ":" + std::to_string(lineno) + ": expected '<person>\\t<cloth>'");
    rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return rows;
}

std::vector<Sample> load_dataset(const fs::path& dir, Split split, Pairing pairing,
                                 std::uint64_t seed) {
  const auto rows = read_pairs(dir, split);
  std::vector<std::string> missing;
  auto need = [&](const fs::path& p) {
    if (!fs::exists(p)) missing.push_back(p.string());
  };
  for (const auto& [person, cloth] : rows) {
    need(dir / "person" / (person + ".png"));
    need(dir / "mask" / (person + ".png"));
    need(dir / "cloth" / (cloth + ".png"));
  }
  if (!missing.empty()) {
    std::string msg = "dataset " + dir.string() + " is missing:";
    for (const auto& m : missing) msg += " " + m;
    raise(ErrorKind::kLayout, msg);
  }

  std::vector<int> cloth_index(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) cloth_index[i] = static_cast<int>(i);
  if (pairing == Pairing::kUnpaired) cloth_index = derangement(static_cast<int>(rows.size()), seed);

  std::vector<Sample> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string& person = rows[i].first;
    const std::string& cloth = rows[cloth_index[i]].second;
    Sample s;
    s.id = person;
    s.cloth_id = cloth;
    s.person = to_signed_unit(read_png(dir / "person" / (person + ".png"), 3));
    s.cloth = to_signed_unit(read_png(dir / "cloth" / (cloth + ".png"), 3));
    s.mask = to_signed_unit(read_png(dir / "mask" / (person + ".png"), 1));
    if (pairing == Pairing::kPaired) {
      const fs::path warped = dir / "warped" / (person + ".png");
      const fs::path tryon = dir / "tryon" / (person + ".png");
      if (fs::exists(warped)) {
        s.warped_gt = to_signed_unit(read_png(warped, 3));
        s.has_warped = true;
      }
      if (fs::exists(tryon)) {
        s.tryon_gt = to_signed_unit(read_png(tryon, 3));
        s.has_tryon = true;
      }
    }
    require(s.cloth.shape() == s.person.shape() && s.mask.dim(0) == s.person.dim(0) &&
                s.mask.dim(1) == s.person.dim(1),
            ErrorKind::kLayout, "image sizes differ for sample " + person);
    if (!out.empty())
      require(s.person.shape() == out.front().person.shape(), ErrorKind::kLayout,
              "sample " + person + " differs in size from " + out.front().id);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vtryon::synth
