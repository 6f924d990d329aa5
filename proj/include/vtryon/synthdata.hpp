// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural try-on scenes with exact ground truth, and the on-disk dataset
// layout shared with real try-on datasets:
//
//   <dir>/pairs_train.txt, <dir>/pairs_test.txt   "<person stem>\t<cloth stem>"
//   <dir>/person/<stem>.png   RGB
//   <dir>/cloth/<stem>.png    RGB, garment on a plain background
//   <dir>/mask/<stem>.png     gray, {0, 255}; 255 marks the region to replace
//   <dir>/warped/<stem>.png   RGB, optional
//   <dir>/tryon/<stem>.png    RGB, optional

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vtryon/image_io.hpp"
#include "vtryon/tensor.hpp"

namespace vtryon::synth {

enum class TextureFamily { kStripes, kChecks, kSolid, kLogoGlyph };

// Background outside the mask in warped ground truth, and behind flat garments.
inline constexpr std::array<std::uint8_t, 3> kGarmentBackground{255, 255, 255};
// Person backdrop.
inline constexpr std::array<std::uint8_t, 3> kSceneBackground{196, 204, 212};

struct SceneParams {
  int height = 64;
  int width = 48;
  // Images must be divisible by this (the autoencoder downsampling factor).
  int divisor = 4;
  double max_rotation_deg = 20.0;
  // Torso offset range as a fraction of the canvas size.
  double max_translation = 0.10;
  double min_scale = 0.9;
  double max_scale = 1.1;
  // Amplitude in pixels of the sinusoidal horizontal shear.
  double max_shear = 1.5;
  std::vector<TextureFamily> families{TextureFamily::kStripes, TextureFamily::kChecks,
                                      TextureFamily::kSolid, TextureFamily::kLogoGlyph};
  double occlusion_probability = 0.3;
  // Zero rotation and shear, unit scale, integer translation.
  bool identity_deformation = false;
};

void validate(const SceneParams& params);

// Pose drawn for one sample.
struct Pose {
  double center_y = 0.0, center_x = 0.0;
  double rotation = 0.0;  // radians
  double scale = 1.0;
  double shear_amplitude = 0.0;
  double shear_period = 16.0;
  bool occluded = false;
};

struct RawSample {
  std::string id;
  Image8 person, cloth, mask, warped, tryon;
  Pose pose;
};

// Images in [-1, 1]: person/cloth/warped_gt/tryon_gt are (H, W, 3), mask is
// (H, W, 1) with values in {-1, +1}.
struct Sample {
  std::string id;
  std::string cloth_id;
  Tensor person, cloth, mask, warped_gt, tryon_gt;
  bool has_warped = false;
  bool has_tryon = false;
};

RawSample gen_sample_raw(const SceneParams& params, std::uint64_t seed, const std::string& id = "");
Sample gen_sample(const SceneParams& params, std::uint64_t seed, const std::string& id = "");
Sample to_sample(const RawSample& raw);

// Maps a canvas pixel to the flat-garment pixel it is sampled from.
std::array<int, 2> inverse_warp(const Pose& pose, const SceneParams& params, int y, int x);

enum class Split { kTrain, kTest };
enum class Pairing { kPaired, kUnpaired };
Split parse_split(const std::string& s);
Pairing parse_pairing(const std::string& s);
std::string to_string(Split split);

// 90/10 split by FNV-1a hash of the id; independent of the generation seed.
Split split_of(const std::string& id);

struct Manifest {
  std::vector<std::string> ids;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

Manifest gen_dataset(int n, const SceneParams& params, std::uint64_t seed,
                     const std::filesystem::path& out_dir);

// Fixed-point-free permutation (Sattolo's algorithm) of 0..n-1, n >= 2.
std::vector<int> derangement(int n, std::uint64_t seed);

std::vector<std::pair<std::string, std::string>> read_pairs(const std::filesystem::path& dir,
                                                            Split split);

// Loads a split. Unpaired mode assigns cloth of a deranged partner and leaves
// warped/tryon ground truth unset. Throws a layout error listing missing files.
std::vector<Sample> load_dataset(const std::filesystem::path& dir, Split split, Pairing pairing,
                                 std::uint64_t seed = 0);

}  // namespace vtryon::synth
