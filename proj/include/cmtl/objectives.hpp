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


// Training objectives: weighted cross-entropy on count groups, Euclidean
// density regression and their weighted sum.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cmtl/errors.hpp"
#include "cmtl/tensor.hpp"

namespace cmtl {

inline constexpr double kLogEpsilon = 1e-12;

enum class DensityNormalization {
  per_pixel_mean,  // mean squared error over pixels
  per_image_sum,   // literal L2 norm of the difference
};

inline const char* to_string(DensityNormalization n) {
  return n == DensityNormalization::per_pixel_mean ? "per_pixel_mean" : "per_image_sum";
}

inline DensityNormalization parse_density_normalization(const std::string& s) {
  if (s == "per_pixel_mean") return DensityNormalization::per_pixel_mean;
  if (s == "per_image_sum") return DensityNormalization::per_image_sum;
  throw ConfigError("unknown density_loss_normalization '" + s + "'");
}

struct LossConfig {
  double lambda = 1e-4;
  std::vector<double> class_weights;  // empty means all ones
  DensityNormalization density_normalization = DensityNormalization::per_pixel_mean;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    for (double w : class_weights)
      if (!(w > 0.0)) throw ConfigError("class weights must be positive");
  }

  double weight(int label) const {
    return class_weights.empty() ? 1.0 : class_weights.at(static_cast<std::size_t>(label));
  }
};

/// -w_y log(p_y + eps) for one sample, clamped at 0 so p_y = 1 scores
/// exactly zero.
template <typename T>
double classification_loss(std::span<const T> probs, int label, double weight = 1.0) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
    throw InputError("label " + std::to_string(label) + " outside the class range");
  const double l = -weight * std::log(static_cast<double>(probs[static_cast<std::size_t>(label)]) + kLogEpsilon);
  return std::max(0.0, l);
}

/// Batch mean of classification_loss.
template <typename T>
double classification_loss(const std::vector<std::vector<T>>& probs, std::span<const int> labels,
                           std::span<const double> weights) {
  if (probs.size() != labels.size()) throw ContractError("probs/labels batch size mismatch");
  if (probs.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(labels[i])];
    s += classification_loss<T>(probs[i], labels[i], w);
  }
  return s / static_cast<double>(probs.size());
}

/// Gradient of classification_loss with respect to the pre-softmax scores.
template <typename T>
Buffer<T> classification_loss_grad(std::span<const T> probs, int label, double weight, double scale = 1.0) {
  const double py = static_cast<double>(probs[static_cast<std::size_t>(label)]);
  const double k = scale * weight * py / (py + kLogEpsilon);
  Buffer<T> g(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j)
    g[j] = static_cast<T>(k * (static_cast<double>(probs[j]) - (static_cast<int>(j) == label ? 1.0 : 0.0)));
  return g;
}

template <typename T>
void check_same_shape(const Grid<T>& a, const Grid<T>& b) {
  if (!a.same_shape(b)) {
    throw ContractError("density maps differ in size: " + std::to_string(a.height()) + "x" +
                        std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                        std::to_string(b.width()));
  }
}

template <typename T>
double density_loss(const Grid<T>& predicted, const Grid<T>& target,
                    DensityNormalization norm = DensityNormalization::per_pixel_mean) {
  check_same_shape(predicted, target);
  double ss = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = static_cast<double>(predicted.data()[i]) - static_cast<double>(target.data()[i]);
    ss += d * d;
  }
  if (norm == DensityNormalization::per_pixel_mean) return predicted.empty() ? 0.0 : ss / predicted.size();
  return std::sqrt(ss);
}

/// Batch mean of density_loss.
template <typename T>
double density_loss(const std::vector<Grid<T>>& predicted, const std::vector<Grid<T>>& target,
                    DensityNormalization norm = DensityNormalization::per_pixel_mean) {
  if (predicted.size() != target.size()) throw ContractError("prediction/target batch size mismatch");
  if (predicted.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += density_loss(predicted[i], target[i], norm);
  return s / static_cast<double>(predicted.size());
}

/// dL/d(predicted). The L2 norm is not differentiable at zero; its gradient
/// is taken as zero there.
template <typename T>
Grid<T> density_loss_grad(const Grid<T>& predicted, const Grid<T>& target, DensityNormalization norm,
                          double scale = 1.0) {
  check_same_shape(predicted, target);
  Grid<T> g(predicted.height(), predicted.width());
  double k;
  if (norm == DensityNormalization::per_pixel_mean) {
    k = 2.0 / static_cast<double>(predicted.size());
  } else {
    const double l = density_loss(predicted, target, norm);
    k = l > 0.0 ? 1.0 / l : 0.0;
  }
  k *= scale;
  for (std::size_t i = 0; i < g.size(); ++i)
    g.data()[i] = static_cast<T>(k * (static_cast<double>(predicted.data()[i]) - static_cast<double>(target.data()[i])));
  return g;
}

/// lambda * L_c + L_d.
inline double unified_loss(double classification, double density, double lambda) {
  return lambda * classification + density;
}

}  // namespace cmtl
