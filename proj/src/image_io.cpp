// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "vtryon/error.hpp"

namespace vtryon {

void write_png(const std::filesystem::path& path, const Image8& image) {
  require(image.channels == 1 || image.channels == 3, ErrorKind::kFormat,
          "PNG output supports 1 or 3 channels");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    raise(ErrorKind::kIo, "cannot write " + path.string() + ": " + msg);
  }
}

Image8 read_png(const std::filesystem::path& path, int channels) {
  require(channels == 1 || channels == 3, ErrorKind::kFormat, "PNG input supports 1 or 3 channels");
  require(std::filesystem::exists(path), ErrorKind::kIo, "missing file " + path.string());
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    raise(ErrorKind::kIo, "cannot read " + path.string() + ": " + png.message);
  png.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out(static_cast<int>(png.height), static_cast<int>(png.width), channels);
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    raise(ErrorKind::kIo, "cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

Tensor to_signed_unit(const Image8& image) {
  Tensor t({image.height, image.width, image.channels});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) t[i] = image.pixels[i] / 127.5 - 1.0;
  return t;
}

Image8 from_signed_unit(const Tensor& image) {
  require(image.rank() == 3, ErrorKind::kShapeMismatch,
          "expected (H, W, C) image, got " + shape_str(image.shape()));
  Image8 out(image.dim(0), image.dim(1), image.dim(2));
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::round((image[i] + 1.0) * 127.5);
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

Image8 hconcat(const std::vector<Image8>& images) {
  require(!images.empty(), ErrorKind::kShapeMismatch, "hconcat of zero images");
  int width = 0;
  for (const auto& im : images) {
    require(im.height == images[0].height && im.channels == images[0].channels,
            ErrorKind::kShapeMismatch, "hconcat: images differ in height or channels");
    width += im.width;
  }
  Image8 out(images[0].height, width, images[0].channels);
  int x0 = 0;
  for (const auto& im : images) {
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x)
        for (int c = 0; c < im.channels; ++c) out.at(y, x0 + x, c) = im.at(y, x, c);
    x0 += im.width;
  }
  return out;
}

Image8 gray_to_rgb(const Image8& image) {
  if (image.channels == 3) return image;
  Image8 out(image.height, image.width, 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, x, 0);
  return out;
}

}  // namespace vtryon
