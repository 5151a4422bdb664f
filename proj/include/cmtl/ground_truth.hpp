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


// Dot-annotation ground truth: each head contributes one discretized 2-D
// Gaussian of unit mass to the density map.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "cmtl/errors.hpp"
#include "cmtl/tensor.hpp"

namespace cmtl {

/// Head center in pixels; origin top-left, x rightward, y downward.
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

using HeadAnnotations = std::vector<Point>;

/// Persons per pixel. Non-negative by construction when produced here.
using DensityMap = Grid<float>;

struct GroundTruthConfig {
  double sigma = 4.0;
  bool renormalize_truncated = true;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw ConfigError("ground truth sigma must be positive, got " + std::to_string(sigma));
  }
};

inline bool inside(const Point& p, std::size_t height, std::size_t width) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x < static_cast<double>(width) &&
         p.y < static_cast<double>(height);
}

inline std::string describe(const Point& p) {
  std::ostringstream os;
  os << "(" << p.x << ", " << p.y << ")";
  return os.str();
}

/// Half-width of the square kernel window, ceil(3 sigma).
inline int kernel_radius(double sigma) { return static_cast<int>(std::ceil(3.0 * sigma)); }

/// Sum of one isotropic Gaussian per head. The window is centered on the
/// pixel containing the head and clipped to the grid; the Gaussian itself is
/// evaluated at pixel centers relative to the exact head position.
inline DensityMap generate_density_map(std::size_t height, std::size_t width,
                                       const HeadAnnotations& heads,
                                       const GroundTruthConfig& cfg = {}) {
  cfg.validate();
  if (height == 0 || width == 0) throw InputError("density map size must be positive");
  for (const auto& p : heads) {
    if (!inside(p, height, width)) {
      throw InputError("head " + describe(p) + " lies outside the " + std::to_string(height) +
                       "x" + std::to_string(width) + " image");
    }
  }

  const double sigma = cfg.sigma;
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
  const double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
  const int radius = kernel_radius(sigma);
  const int h = static_cast<int>(height);
  const int w = static_cast<int>(width);

  Grid<double> acc(height, width);
  std::vector<double> gx, gy;
  for (const auto& p : heads) {
    const int cx = static_cast<int>(std::floor(p.x));
    const int cy = static_cast<int>(std::floor(p.y));
    const int x0 = std::max(0, cx - radius), x1 = std::min(w - 1, cx + radius);
    const int y0 = std::max(0, cy - radius), y1 = std::min(h - 1, cy + radius);

    // Separable: g(dx, dy) = norm * e(dx) * e(dy).
    gx.resize(static_cast<std::size_t>(x1 - x0 + 1));
    gy.resize(static_cast<std::size_t>(y1 - y0 + 1));
    double sx = 0.0, sy = 0.0;
    for (int x = x0; x <= x1; ++x) {
      const double d = (x + 0.5) - p.x;
      sx += gx[x - x0] = std::exp(-d * d * inv_two_sigma_sq);
    }
    for (int y = y0; y <= y1; ++y) {
      const double d = (y + 0.5) - p.y;
      sy += gy[y - y0] = std::exp(-d * d * inv_two_sigma_sq);
    }
    const double scale = cfg.renormalize_truncated ? 1.0 / (sx * sy) : norm;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) acc(y, x) += scale * gy[y - y0] * gx[x - x0];
  }
  return acc.cast<float>();
}

inline DensityMap generate_density_map(const Grid<float>& image, const HeadAnnotations& heads,
                                       const GroundTruthConfig& cfg = {}) {
  return generate_density_map(image.height(), image.width(), heads, cfg);
}

/// Total mass of the map, accumulated in double.
template <typename T>
double count_from_density(const Grid<T>& map) {
  double s = 0.0;
  for (T v : map.values()) s += static_cast<double>(v);
  return s;
}

/// Block-sum pooling; preserves total mass up to the rounding of each block
/// sum to T.
template <typename T>
Grid<T> downsample_density(const Grid<T>& map, int factor) {
  if (factor < 1) throw InputError("downsample factor must be >= 1");
  const auto f = static_cast<std::size_t>(factor);
  if (map.height() % f != 0 || map.width() % f != 0) {
    throw InputError("downsample factor " + std::to_string(factor) + " does not divide " +
                     std::to_string(map.height()) + "x" + std::to_string(map.width()));
  }
  if (factor == 1) return map;
  Grid<T> out(map.height() / f, map.width() / f);
  for (std::size_t oy = 0; oy < out.height(); ++oy) {
    for (std::size_t ox = 0; ox < out.width(); ++ox) {
      double s = 0.0;
      for (std::size_t dy = 0; dy < f; ++dy)
        for (std::size_t dx = 0; dx < f; ++dx) s += map(oy * f + dy, ox * f + dx);
      out(oy, ox) = static_cast<T>(s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// DMAP binary format: "DMAP", u32 LE height, u32 LE width, then height*width
// IEEE-754 float32 LE values in row-major order.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace detail

inline std::string encode_dmap(const DensityMap& map) {
  std::string out = "DMAP";
  out.reserve(12 + 4 * map.size());
  detail::put_u32(out, static_cast<std::uint32_t>(map.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(map.width()));
  for (float v : map.values()) detail::put_f32(out, v);
  return out;
}

inline DensityMap decode_dmap(const std::string& bytes, const std::string& what = "DMAP data") {
  if (bytes.size() < 12 || bytes.compare(0, 4, "DMAP") != 0)
    throw LoadError(what + ": missing DMAP header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t h = detail::get_u32(p + 4);
  const std::uint32_t w = detail::get_u32(p + 8);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 12 + 4 * n) {
    throw LoadError(what + ": expected " + std::to_string(12 + 4 * n) + " bytes for " +
                    std::to_string(h) + "x" + std::to_string(w) + ", found " +
                    std::to_string(bytes.size()));
  }
  DensityMap map(h, w);
  for (std::size_t i = 0; i < n; ++i) map.data()[i] = detail::get_f32(p + 12 + 4 * i);
  return map;
}

inline void write_dmap(const std::filesystem::path& path, const DensityMap& map) {
  detail::write_file(path, encode_dmap(map));
}

inline DensityMap read_dmap(const std::filesystem::path& path) {
  return decode_dmap(detail::read_file(path), path.string());
}

}  // namespace cmtl
