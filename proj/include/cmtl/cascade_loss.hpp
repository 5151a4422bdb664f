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


// Per-sample unified loss of the cascade and its gradient with respect to
// every parameter.

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "cmtl/model.hpp"
#include "cmtl/objectives.hpp"

namespace cmtl {

struct LossTerms {
  double total = 0.0;
  double classification = 0.0;
  double density = 0.0;
};

/// Forward pass plus losses for one (image, density, label) sample. When
/// `grad` is non-empty the gradient of scale * total is accumulated into it.
/// Single-stage models contribute no classification term.
template <typename T>
LossTerms sample_loss(const ModelParameters<T>& params, const Architecture& arch, const Grid<T>& image,
                      const Grid<T>& target, int label, const LossConfig& loss, std::span<T> grad = {},
                      double scale = 1.0, ForwardOutputs<T>* outputs = nullptr) {
  Trace<T> trace;
  ForwardOutputs<T> out = forward_trace(params, arch, image, trace);
  LossTerms terms;
  terms.density = density_loss(out.density, target, loss.density_normalization);
  const bool classify = !out.class_probs.empty();
  if (classify) terms.classification = classification_loss<T>(out.class_probs, label, loss.weight(label));
  terms.total = unified_loss(terms.classification, terms.density, loss.lambda);

  if (!grad.empty()) {
    const Grid<T> d_density = density_loss_grad(out.density, target, loss.density_normalization, scale);
    Buffer<T> d_scores;
    if (classify && loss.lambda != 0.0)
      d_scores = classification_loss_grad<T>(out.class_probs, label, loss.weight(label), scale * loss.lambda);
    backward<T>(params, arch, trace, d_scores, &d_density, grad);
  }
  if (outputs) *outputs = std::move(out);
  return terms;
}

}  // namespace cmtl
