// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vtryon/tensor.hpp"

namespace vtryon {

// 8-bit interleaved raster, row-major (H, W, C) with C in {1, 3}.
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int h, int w, int c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

// PNG via libpng's simplified API (default zlib settings, no ancillary chunks),
// so identical rasters always encode to identical bytes.
void write_png(const std::filesystem::path& path, const Image8& image);
// Reads a PNG converted to `channels` (1 = gray, 3 = RGB).
Image8 read_png(const std::filesystem::path& path, int channels);

// v / 127.5 - 1, giving (H, W, C) values in [-1, 1].
Tensor to_signed_unit(const Image8& image);
// Inverse mapping with rounding and clamping to [0, 255].
Image8 from_signed_unit(const Tensor& image);

// Places images side by side (all must share height and channel count).
Image8 hconcat(const std::vector<Image8>& images);
// Expands a 1-channel raster to 3 channels.
Image8 gray_to_rgb(const Image8& image);

}  // namespace vtryon
