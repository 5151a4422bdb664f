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


// Central finite-difference check of the analytic gradient of the unified
// loss, parameter group by parameter group.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cmtl/cascade_loss.hpp"

namespace cmtl {

struct GradientCheckOptions {
  double step = 1e-5;
  /// Coordinates probed per parameter group; 0 probes every coordinate. The
  /// coordinate with the largest analytic gradient is always included.
  std::size_t samples_per_group = 24;
  /// Denominator floor for the relative error.
  double floor = 1e-7;
  std::uint64_t seed = 0;
};

struct GroupCheck {
  std::string name;
  std::size_t probed = 0;
  double max_relative_error = 0.0;
  double analytic_norm = 0.0;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_group;
  std::vector<GroupCheck> groups;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Full analytic gradient of the unified loss for one sample.
inline Buffer<double> loss_gradient(const ModelParameters<double>& params, const Grid<double>& image,
                                         const Grid<double>& target, int label, const LossConfig& loss) {
  const Architecture arch(params.config);
  Buffer<double> grad(params.values.size(), 0.0);
  sample_loss<double>(params, arch, image, target, label, loss, grad);
  return grad;
}

inline GradientCheckResult check_gradients(const ModelParameters<double>& params, const Grid<double>& image,
                                           const Grid<double>& target, int label, const LossConfig& loss,
                                           const GradientCheckOptions& opt = {}) {
  const Architecture arch(params.config);
  const Buffer<double> grad = loss_gradient(params, image, target, label, loss);
  for (const auto& s : params.slots) {
    for (std::size_t i = 0; i < s.size; ++i) {
      if (!std::isfinite(grad[s.offset + i]))
        throw NumericError("non-finite gradient in layer " + s.name);
    }
  }

  ModelParameters<double> probe = params;
  auto loss_at = [&](std::size_t index, double value) {
    const double saved = probe.values[index];
    probe.values[index] = value;
    const double l = sample_loss<double>(probe, arch, image, target, label, loss).total;
    probe.values[index] = saved;
    return l;
  };

  std::mt19937_64 rng(opt.seed);
  GradientCheckResult result;
  for (const auto& s : params.slots) {
    std::vector<std::size_t> coords(s.size);
    std::iota(coords.begin(), coords.end(), s.offset);
    if (opt.samples_per_group > 0 && s.size > opt.samples_per_group) {
      const auto largest = *std::max_element(coords.begin(), coords.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(grad[a]) < std::abs(grad[b]);
      });
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.samples_per_group);
      if (std::find(coords.begin(), coords.end(), largest) == coords.end()) coords.back() = largest;
    }

    GroupCheck g;
    g.name = s.name;
    for (std::size_t i = 0; i < s.size; ++i) g.analytic_norm += grad[s.offset + i] * grad[s.offset + i];
    g.analytic_norm = std::sqrt(g.analytic_norm);
    for (std::size_t idx : coords) {
      const double x = params.values[idx];
      const double numeric = (loss_at(idx, x + opt.step) - loss_at(idx, x - opt.step)) / (2.0 * opt.step);
      if (!std::isfinite(numeric)) throw NumericError("non-finite finite-difference loss in layer " + s.name);
      g.max_relative_error = std::max(g.max_relative_error, relative_error(grad[idx], numeric, opt.floor));
      ++g.probed;
    }
    if (g.max_relative_error >= result.max_relative_error) {
      result.max_relative_error = g.max_relative_error;
      result.worst_group = g.name;
    }
    result.groups.push_back(std::move(g));
  }
  return result;
}

}  // namespace cmtl
