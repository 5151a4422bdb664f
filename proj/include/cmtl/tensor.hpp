// Copyright 2026 The cmtl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "cmtl/errors.hpp"

namespace cmtl {

/// Allocator returning 64-byte aligned storage. SIMD kernels choose their
/// loop peeling from buffer alignment, so a fixed alignment keeps float
/// reductions bit-reproducible regardless of where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

/// Numeric storage used throughout the network code.
template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Row-major 2-D array. Used for grayscale images and density maps.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t height, std::size_t width, T fill = T(0))
      : height_(height), width_(width), data_(height * width, fill) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  bool same_shape(const Grid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

  template <typename U>
  Grid<U> cast() const {
    Grid<U> out(height_, width_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  Buffer<T> data_;
};

/// Channel-major stack of feature maps (C x H x W).
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  int plane() const noexcept { return height * width; }
  std::size_t size() const noexcept { return data.size(); }

  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  T* channel(int c) { return data.data() + static_cast<std::size_t>(c) * plane(); }
  const T* channel(int c) const { return data.data() + static_cast<std::size_t>(c) * plane(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <typename T>
Tensor<T> to_tensor(const Grid<T>& g) {
  Tensor<T> t(1, static_cast<int>(g.height()), static_cast<int>(g.width()));
  std::copy(g.values().begin(), g.values().end(), t.data.begin());
  return t;
}

template <typename T>
Grid<T> to_grid(const Tensor<T>& t, int channel = 0) {
  Grid<T> g(static_cast<std::size_t>(t.height), static_cast<std::size_t>(t.width));
  std::copy(t.channel(channel), t.channel(channel) + t.plane(), g.data());
  return g;
}

/// Mirror left-right.
template <typename T>
Grid<T> hflip(const Grid<T>& g) {
  Grid<T> out(g.height(), g.width());
  for (std::size_t y = 0; y < g.height(); ++y)
    for (std::size_t x = 0; x < g.width(); ++x) out(y, g.width() - 1 - x) = g(y, x);
  return out;
}

/// Copy of the sub-rectangle [y0, y0+h) x [x0, x0+w).
template <typename T>
Grid<T> crop(const Grid<T>& g, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > g.height() || x0 + w > g.width())
    throw InputError("crop window exceeds grid bounds");
  Grid<T> out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out(y, x) = g(y0 + y, x0 + x);
  return out;
}

}  // namespace cmtl
