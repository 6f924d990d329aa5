// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace vtryon {

using Shape = std::vector<int>;

// 64-byte aligned storage. Eigen picks vectorised code paths by pointer
// alignment, so unaligned buffers make small products differ in the last bit
// from one allocation to the next.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. Images and latents are stored channel-last
// (H, W, C), batched as (N, H, W, C); token sequences as (n, d) or (N, n, d).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  int dim(int i) const;
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  Storage& vec() noexcept { return data_; }
  const Storage& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Channel-last indexing helpers.
  double& at(int y, int x, int c);
  double at(int y, int x, int c) const;
  double& at(int n, int y, int x, int c);
  double at(int n, int y, int x, int c) const;

  // Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  // Slice i along the leading axis (copy).
  Tensor slice0(int i) const;
  // Stack equally shaped tensors along a new leading axis.
  static Tensor stack(std::span<const Tensor> parts);

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Bitwise equality of shape and contents.
  bool bitwise_equal(const Tensor& other) const;

 private:
  Shape shape_;
  Storage data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// FNV-1a over the raw bytes of the shape and the data.
std::uint64_t hash_tensor(const Tensor& t, std::uint64_t seed = 14695981039346656037ULL);
std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ULL);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace vtryon
