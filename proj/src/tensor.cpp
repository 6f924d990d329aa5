// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "vtryon/error.hpp"

namespace vtryon {

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, ErrorKind::kShapeMismatch, "negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  require(data_.size() == shape_numel(shape_), ErrorKind::kShapeMismatch,
          "data size " + std::to_string(data_.size()) + " does not match shape " +
              shape_str(shape_));
}

int Tensor::dim(int i) const {
  if (i < 0) i += rank();
  require(i >= 0 && i < rank(), ErrorKind::kShapeMismatch,
          "axis out of range for shape " + shape_str(shape_));
  return shape_[i];
}

double& Tensor::at(int y, int x, int c) {
  return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + c];
}
double Tensor::at(int y, int x, int c) const {
  return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + c];
}
double& Tensor::at(int n, int y, int x, int c) {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
}
double Tensor::at(int n, int y, int x, int c) const {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == data_.size(), ErrorKind::kShapeMismatch,
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor out(std::move(shape));
  out.data_ = data_;
  return out;
}

Tensor Tensor::slice0(int i) const {
  require(rank() >= 1 && i >= 0 && i < shape_[0], ErrorKind::kShapeMismatch,
          "slice index out of range for " + shape_str(shape_));
  Shape inner(shape_.begin() + 1, shape_.end());
  const std::size_t n = shape_numel(inner);
  Tensor out(inner);
  std::copy(data_.begin() + i * n, data_.begin() + (i + 1) * n, out.data_.begin());
  return out;
}

Tensor Tensor::stack(std::span<const Tensor> parts) {
  require(!parts.empty(), ErrorKind::kShapeMismatch, "stack of zero tensors");
  Shape shape = parts[0].shape();
  std::vector<double> data;
  data.reserve(parts.size() * parts[0].size());
  for (const Tensor& p : parts) {
    require(p.shape() == shape, ErrorKind::kShapeMismatch,
            "stack parts differ: " + shape_str(shape) + " vs " + shape_str(p.shape()));
    data.insert(data.end(), p.vec().begin(), p.vec().end());
  }
  shape.insert(shape.begin(), static_cast<int>(parts.size()));
  return Tensor(std::move(shape), std::move(data));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), ErrorKind::kShapeMismatch,
          std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t hash_tensor(const Tensor& t, std::uint64_t seed) {
  std::uint64_t h = hash_bytes(t.shape().data(), t.shape().size() * sizeof(int), seed);
  return hash_bytes(t.data(), t.size() * sizeof(double), h);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace vtryon
