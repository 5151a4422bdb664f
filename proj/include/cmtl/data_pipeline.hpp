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


// Dataset ingestion, count-group quantization, patch augmentation, class
// reweighting and synthetic dataset generation.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmtl/errors.hpp"
#include "cmtl/ground_truth.hpp"
#include "cmtl/image_io.hpp"
#include "cmtl/tensor.hpp"

namespace cmtl {

inline constexpr int kDefaultGroups = 10;
inline constexpr std::size_t kMinImageSide = 16;

struct DotAnnotatedImage {
  Grid<float> image;  // grayscale, [0, 1]
  HeadAnnotations heads;
  std::string id;
};

enum class Augmentation { none, hflip, noise };

inline const char* to_string(Augmentation a) {
  switch (a) {
    case Augmentation::none: return "none";
    case Augmentation::hflip: return "hflip";
    case Augmentation::noise: return "noise";
  }
  return "?";
}

struct TrainingPatch {
  Grid<float> image;
  DensityMap density;
  int group_label = 0;
  int head_count = 0;
  std::string source_id;
  Augmentation augmentation = Augmentation::none;
};

/// M-1 strictly ascending count thresholds shared by a whole dataset.
using GroupBoundaries = std::vector<double>;

/// One positive weight per count group, mean 1.
using ClassWeights = std::vector<double>;

struct PatchConfig {
  int crops = 100;              // random crops; flips and noisy copies add 2x more
  double crop_fraction = 0.5;   // per dimension, i.e. quarter area
  double noise_std = 0.01;      // additive Gaussian, pixel units in [0, 1]

  void validate() const {
    if (crops < 1) throw ConfigError("patch crops must be >= 1");
    if (!(crop_fraction > 0.0 && crop_fraction <= 1.0))
      throw ConfigError("crop_fraction must lie in (0, 1]");
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Manifest I/O

namespace detail {

inline void validate_image(const DotAnnotatedImage& img) {
  if (img.image.height() < kMinImageSide || img.image.width() < kMinImageSide) {
    throw LoadError("image '" + img.id + "' is " + std::to_string(img.image.height()) + "x" +
                    std::to_string(img.image.width()) + ", smaller than 16x16");
  }
  for (const auto& p : img.heads) {
    if (!inside(p, img.image.height(), img.image.width()))
      throw LoadError("image '" + img.id + "': head " + describe(p) + " is out of bounds");
  }
}

}  // namespace detail

/// Reads a JSON manifest: [{"id": ..., "image": "rel/path.png", "heads": [[x, y], ...]}].
/// Image paths are resolved relative to the manifest's directory.
inline std::vector<DotAnnotatedImage> load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open manifest " + manifest_path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_array()) throw LoadError("manifest " + manifest_path.string() + " must be a list");

  const auto base = manifest_path.parent_path();
  std::vector<DotAnnotatedImage> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& entry = doc[i];
    const std::string label =
        entry.is_object() && entry.contains("id") && entry["id"].is_string()
            ? entry["id"].get<std::string>()
            : "entry #" + std::to_string(i);
    if (!entry.is_object() || !entry.contains("image") || !entry["image"].is_string())
      throw LoadError("manifest " + label + ": missing \"image\" path");

    DotAnnotatedImage img;
    img.id = label;
    const auto image_path = base / entry["image"].get<std::string>();
    if (!std::filesystem::exists(image_path))
      throw LoadError("manifest " + label + ": image file " + image_path.string() + " not found");
    img.image = read_png_gray(image_path);

    if (entry.contains("heads")) {
      const auto& heads = entry["heads"];
      if (!heads.is_array()) throw LoadError("manifest " + label + ": \"heads\" must be a list");
      for (const auto& h : heads) {
        if (!h.is_array() || h.size() != 2 || !h[0].is_number() || !h[1].is_number())
          throw LoadError("manifest " + label + ": malformed head coordinate " + h.dump());
        img.heads.push_back({h[0].get<double>(), h[1].get<double>()});
      }
    }
    detail::validate_image(img);
    out.push_back(std::move(img));
  }
  return out;
}

/// Writes <dir>/<id>.png for each image and <dir>/manifest.json. Returns the
/// manifest path.
inline std::filesystem::path save_dataset(const std::vector<DotAnnotatedImage>& images,
                                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& img : images) {
    const std::string file = img.id + ".png";
    write_png_gray(dir / file, img.image);
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& p : img.heads) heads.push_back({p.x, p.y});
    doc.push_back({{"id", img.id}, {"image", file}, {"heads", heads}});
  }
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(1) << "\n";
  return path;
}

// ---------------------------------------------------------------------------
// Count groups

/// Equal-frequency cut points: boundary k is the smallest observed count c
/// with at least k/M of the data strictly below it. Boundaries that would
/// not increase are nudged to the next distinct observed value (or one past
/// the previous boundary once the distinct values run out).
inline GroupBoundaries fit_group_boundaries(std::vector<double> counts, int groups = kDefaultGroups) {
  if (counts.empty()) throw InputError("cannot fit group boundaries to an empty count list");
  if (groups < 2) throw InputError("need at least 2 count groups");
  std::sort(counts.begin(), counts.end());
  if (counts.front() == counts.back()) {
    throw InputError("all counts equal " + std::to_string(counts.front()) +
                     "; the distribution is degenerate, use uniform-width boundaries instead");
  }

  const std::size_t n = counts.size();
  GroupBoundaries b;
  b.reserve(static_cast<std::size_t>(groups - 1));
  double prev = counts.front();
  for (int k = 1; k < groups; ++k) {
    const auto idx = std::min<std::size_t>(
        n - 1, static_cast<std::size_t>(std::ceil(static_cast<double>(k) * n / groups)));
    double v = counts[idx];
    if (v <= prev) {
      auto it = std::upper_bound(counts.begin(), counts.end(), prev);
      v = it != counts.end() ? *it : prev + 1.0;
    }
    b.push_back(v);
    prev = v;
  }
  return b;
}

/// Fallback for degenerate count distributions: M-1 equal-width cuts on [lo, hi].
inline GroupBoundaries uniform_group_boundaries(double lo, double hi, int groups = kDefaultGroups) {
  if (groups < 2) throw InputError("need at least 2 count groups");
  if (!(hi > lo)) hi = lo + groups;
  GroupBoundaries b;
  for (int k = 1; k < groups; ++k) b.push_back(lo + (hi - lo) * k / groups);
  return b;
}

/// Number of boundaries <= count; a count equal to a boundary maps upward.
inline int quantize_count(double count, const GroupBoundaries& boundaries) {
  return static_cast<int>(std::upper_bound(boundaries.begin(), boundaries.end(), count) -
                          boundaries.begin());
}

/// Inverse-frequency weights total / (M n_j); absent classes take the largest
/// present raw weight. Rescaled to mean 1.
inline ClassWeights compute_class_weights(const std::vector<int>& labels, int groups = kDefaultGroups) {
  if (labels.empty()) throw InputError("cannot weight an empty label list");
  std::vector<std::size_t> n(static_cast<std::size_t>(groups), 0);
  for (int y : labels) {
    if (y < 0 || y >= groups)
      throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(groups) + ")");
    ++n[static_cast<std::size_t>(y)];
  }
  const double total = static_cast<double>(labels.size());
  ClassWeights w(static_cast<std::size_t>(groups), 0.0);
  double max_raw = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (n[j] > 0) {
      w[j] = total / (groups * static_cast<double>(n[j]));
      max_raw = std::max(max_raw, w[j]);
    }
  }
  for (std::size_t j = 0; j < w.size(); ++j)
    if (n[j] == 0) w[j] = max_raw;
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / groups;
  for (auto& v : w) v /= mean;
  return w;
}

// ---------------------------------------------------------------------------
// Patches

/// Heads inside [y0, y0+h) x [x0, x0+w), rebased to the window origin.
inline HeadAnnotations heads_in_window(const HeadAnnotations& heads, std::size_t y0,
                                       std::size_t x0, std::size_t h, std::size_t w) {
  HeadAnnotations out;
  for (const auto& p : heads) {
    const Point q{p.x - static_cast<double>(x0), p.y - static_cast<double>(y0)};
    if (inside(q, h, w)) out.push_back(q);
  }
  return out;
}

/// crops random windows, then a mirrored copy and a noisy copy of each, in
/// that order (3 * crops patches). Labels use `boundaries`; with empty
/// boundaries every patch gets group 0 until relabel_patches() is called.
inline std::vector<TrainingPatch> make_patches(const DotAnnotatedImage& img,
                                               const GroundTruthConfig& gt, std::uint64_t seed,
                                               const GroupBoundaries& boundaries = {},
                                               const PatchConfig& pc = {}) {
  gt.validate();
  pc.validate();
  const std::size_t h = img.image.height(), w = img.image.width();
  if (h < 4 || w < 4) {
    throw InputError("image '" + img.id + "' is " + std::to_string(h) + "x" + std::to_string(w) +
                     "; patches need at least 4x4");
  }
  const auto ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(h * pc.crop_fraction)));
  const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(w * pc.crop_fraction)));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_y(0, h - ch), pick_x(0, w - cw);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(pc.noise_std));

  const auto n = static_cast<std::size_t>(pc.crops);
  std::vector<TrainingPatch> out(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y0 = pick_y(rng), x0 = pick_x(rng);
    const auto heads = heads_in_window(img.heads, y0, x0, ch, cw);
    auto& base = out[i];
    base.image = crop(img.image, y0, x0, ch, cw);
    base.density = generate_density_map(ch, cw, heads, gt);
    base.head_count = static_cast<int>(heads.size());
    base.group_label = quantize_count(base.head_count, boundaries);
    base.source_id = img.id;
    base.augmentation = Augmentation::none;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& base = out[i];
    auto& f = out[n + i];
    f = base;
    f.image = hflip(base.image);
    f.density = hflip(base.density);
    f.augmentation = Augmentation::hflip;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& base = out[i];
    auto& z = out[2 * n + i];
    z = base;
    for (auto& v : z.image.values()) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
    z.augmentation = Augmentation::noise;
  }
  return out;
}

inline void relabel_patches(std::vector<TrainingPatch>& patches, const GroupBoundaries& boundaries) {
  for (auto& p : patches) p.group_label = quantize_count(p.head_count, boundaries);
}

/// Deterministic 64-bit mix used to derive per-item seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct TrainingSet {
  std::vector<TrainingPatch> patches;
  GroupBoundaries boundaries;
  ClassWeights class_weights;
};

/// Augments every image, keeps `patches_per_image` of the 3 * crops patches
/// per image (0 keeps all), fits count-group boundaries on the kept patch
/// counts and derives class weights.
inline TrainingSet build_training_set(const std::vector<DotAnnotatedImage>& images,
                                      const GroundTruthConfig& gt, const PatchConfig& pc,
                                      std::uint64_t seed, std::size_t patches_per_image = 0,
                                      int groups = kDefaultGroups) {
  if (images.empty()) throw InputError("cannot build a training set from zero images");
  TrainingSet ts;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto patches = make_patches(images[i], gt, mix_seed(seed, i), {}, pc);
    if (patches_per_image > 0 && patches_per_image < patches.size()) {
      std::mt19937_64 rng(mix_seed(seed ^ 0x5DEECE66Dull, i));
      std::vector<std::size_t> idx(patches.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(patches_per_image);
      std::sort(idx.begin(), idx.end());
      for (auto k : idx) ts.patches.push_back(std::move(patches[k]));
    } else {
      for (auto& p : patches) ts.patches.push_back(std::move(p));
    }
  }
  std::vector<double> counts;
  counts.reserve(ts.patches.size());
  for (const auto& p : ts.patches) counts.push_back(p.head_count);
  try {
    ts.boundaries = fit_group_boundaries(counts, groups);
  } catch (const InputError&) {
    ts.boundaries = uniform_group_boundaries(counts.front(), counts.front() + groups, groups);
  }
  relabel_patches(ts.patches, ts.boundaries);
  std::vector<int> labels;
  labels.reserve(ts.patches.size());
  for (const auto& p : ts.patches) labels.push_back(p.group_label);
  ts.class_weights = compute_class_weights(labels, groups);
  return ts;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::size_t images = 10;
  std::size_t height = 64;
  std::size_t width = 64;
  int count_lo = 0;
  int count_hi = 50;
  double blob_radius = 2.0;
  std::uint64_t seed = 0;
};

/// Renders k ~ U{lo..hi} bright Gaussian-profile discs per image over a
/// smooth textured background. Disc centers are at least 2 * radius apart and
/// at least radius from the border.
inline std::vector<DotAnnotatedImage> synthesize_dataset(const SynthConfig& cfg) {
  if (cfg.count_lo < 0 || cfg.count_hi < cfg.count_lo)
    throw InputError("count range must satisfy 0 <= lo <= hi");
  if (cfg.height < kMinImageSide || cfg.width < kMinImageSide)
    throw InputError("synthetic images must be at least 16x16");
  if (!(cfg.blob_radius > 0.0)) throw InputError("blob radius must be positive");

  const double r = cfg.blob_radius;
  const double span_x = static_cast<double>(cfg.width) - 2.0 * r;
  const double span_y = static_cast<double>(cfg.height) - 2.0 * r;
  // Random sequential placement stalls well before the ~55% jamming limit;
  // refuse counts whose discs would cover more than half the usable area.
  const double disc_area = std::numbers::pi * r * r;
  if (span_x <= 0.0 || span_y <= 0.0 || cfg.count_hi * disc_area > 0.5 * span_x * span_y) {
    throw GenerationError("cannot fit " + std::to_string(cfg.count_hi) + " blobs of radius " +
                          std::to_string(r) + " in a " + std::to_string(cfg.height) + "x" +
                          std::to_string(cfg.width) + " image");
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<DotAnnotatedImage> out;
  out.reserve(cfg.images);
  const double min_dist_sq = 4.0 * r * r;
  const double blob_sigma = r / 2.0;

  for (std::size_t n = 0; n < cfg.images; ++n) {
    DotAnnotatedImage img;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", n);
    img.id = id;

    std::uniform_int_distribution<int> pick_count(cfg.count_lo, cfg.count_hi);
    const int k = pick_count(rng);
    std::uniform_real_distribution<double> ux(r, r + span_x), uy(r, r + span_y);
    const int max_attempts = 2000 * std::max(1, k);
    int attempts = 0;
    while (static_cast<int>(img.heads.size()) < k) {
      if (++attempts > max_attempts)
        throw GenerationError("blob placement failed for image " + img.id);
      const Point p{ux(rng), uy(rng)};
      bool ok = true;
      for (const auto& q : img.heads) {
        const double dx = p.x - q.x, dy = p.y - q.y;
        if (dx * dx + dy * dy < min_dist_sq) { ok = false; break; }
      }
      if (ok) img.heads.push_back(p);
    }

    // Background: two random low-frequency gratings plus fine noise.
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> freq(0.02, 0.12);
    std::normal_distribution<double> grain(0.0, 0.02);
    const double f1x = freq(rng), f1y = freq(rng), p1 = phase(rng);
    const double f2x = freq(rng), f2y = freq(rng), p2 = phase(rng);
    img.image = Grid<float>(cfg.height, cfg.width);
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double v = 0.3 + 0.06 * std::sin(2 * std::numbers::pi * (f1x * x + f1y * y) + p1) +
                         0.04 * std::sin(2 * std::numbers::pi * (f2x * x + f2y * y) + p2) +
                         grain(rng);
        img.image(y, x) = static_cast<float>(v);
      }
    }
    const int rad = static_cast<int>(std::ceil(r));
    for (const auto& p : img.heads) {
      const int cx = static_cast<int>(std::floor(p.x)), cy = static_cast<int>(std::floor(p.y));
      for (int y = cy - rad; y <= cy + rad; ++y) {
        for (int x = cx - rad; x <= cx + rad; ++x) {
          if (y < 0 || x < 0 || y >= static_cast<int>(cfg.height) || x >= static_cast<int>(cfg.width))
            continue;
          const double dx = x + 0.5 - p.x, dy = y + 0.5 - p.y;
          const double d2 = dx * dx + dy * dy;
          if (d2 > r * r) continue;
          img.image(y, x) += static_cast<float>(0.6 * std::exp(-d2 / (2 * blob_sigma * blob_sigma)));
        }
      }
    }
    for (auto& v : img.image.values()) v = std::clamp(v, 0.0f, 1.0f);
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace cmtl
