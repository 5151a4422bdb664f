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


// False-color rendering of density maps for inspection.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>

#include "cmtl/ground_truth.hpp"
#include "cmtl/image_io.hpp"

namespace cmtl {

using Rgb = std::array<std::uint8_t, 3>;

/// 256-entry "hot" ramp: black -> red -> yellow -> white. Entry i is
/// (min(255, 3i), clamp(3i - 255), clamp(3i - 510)).
inline const std::array<Rgb, 256>& hot_colormap() {
  static const std::array<Rgb, 256> lut = [] {
    std::array<Rgb, 256> t{};
    auto c = [](int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); };
    for (int i = 0; i < 256; ++i) t[static_cast<std::size_t>(i)] = {c(3 * i), c(3 * i - 255), c(3 * i - 510)};
    return t;
  }();
  return lut;
}

/// Maps each cell to the colormap after scaling by the map's maximum.
/// Negative cells render as zero; an all-zero map renders black.
inline RgbImage colorize(const DensityMap& map) {
  RgbImage img{map.height(), map.width(), std::vector<std::uint8_t>(3 * map.size(), 0)};
  float peak = 0.0f;
  for (float v : map.values()) peak = std::max(peak, v);
  if (!(peak > 0.0f)) return img;
  const auto& lut = hot_colormap();
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double t = std::max(0.0f, map.data()[i]) / static_cast<double>(peak);
    const auto& c = lut[static_cast<std::size_t>(std::lround(t * 255.0))];
    std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return img;
}

/// Writes `png_path` and the raw map next to it with a .dmap extension.
/// Returns the DMAP path.
inline std::filesystem::path render_density(const DensityMap& map, const std::filesystem::path& png_path) {
  if (png_path.has_parent_path() && !std::filesystem::is_directory(png_path.parent_path()))
    throw IoError("output directory " + png_path.parent_path().string() + " does not exist");
  write_png_rgb(png_path, colorize(map));
  auto dmap_path = png_path;
  dmap_path.replace_extension(".dmap");
  write_dmap(dmap_path, map);
  return dmap_path;
}

}  // namespace cmtl
