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


// Mini-batch Adam training of the cascade on augmented patches.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmtl/cascade_loss.hpp"
#include "cmtl/data_pipeline.hpp"
#include "cmtl/parallel.hpp"

namespace cmtl {

struct TrainingConfig {
  double learning_rate = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 20;
  int batch_size = 8;
  double lambda = 1e-4;
  std::uint64_t seed = 0;
  bool ablation_single_stage = false;
  int checkpoint_every = 0;  // epochs; 0 disables the per-epoch callback cadence
  /// "constant", or "cosine": per-epoch cosine decay from learning_rate down
  /// to learning_rate * lr_min_fraction at the last epoch.
  std::string lr_schedule = "constant";
  double lr_min_fraction = 0.01;

  double learning_rate_at(int epoch) const {
    if (lr_schedule == "constant" || epochs <= 1) return learning_rate;
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
    const double floor = learning_rate * lr_min_fraction;
    return floor + 0.5 * (learning_rate - floor) * (1.0 + std::cos(std::numbers::pi * t));
  }

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be finite and >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (lr_schedule != "constant" && lr_schedule != "cosine")
      throw ConfigError("lr_schedule must be \"constant\" or \"cosine\", got \"" + lr_schedule + "\"");
    if (!(lr_min_fraction >= 0.0 && lr_min_fraction <= 1.0)) throw ConfigError("lr_min_fraction must lie in [0, 1]");
  }
};

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},       {"adam_epsilon", c.adam_epsilon},
                     {"epochs", c.epochs},               {"batch_size", c.batch_size},
                     {"lambda", c.lambda},               {"seed", c.seed},
                     {"ablation_single_stage", c.ablation_single_stage},
                     {"checkpoint_every", c.checkpoint_every},
                     {"lr_schedule", c.lr_schedule},     {"lr_min_fraction", c.lr_min_fraction}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  const TrainingConfig d = c;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_epsilon = j.value("adam_epsilon", d.adam_epsilon);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lambda = j.value("lambda", d.lambda);
  c.seed = j.value("seed", d.seed);
  c.ablation_single_stage = j.value("ablation_single_stage", d.ablation_single_stage);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.lr_schedule = j.value("lr_schedule", d.lr_schedule);
  c.lr_min_fraction = j.value("lr_min_fraction", d.lr_min_fraction);
}

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;            // L
  double classification = 0.0;  // L_c
  double density = 0.0;         // L_d
};

struct TrainResult {
  ModelParameters<float> model;
  std::vector<EpochStats> history;
};

inline void write_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,L,L_c,L_d\n";
  for (const auto& h : history) out << h.epoch << "," << h.loss << "," << h.classification << "," << h.density << "\n";
}

/// Adam over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0f), v_(n, 0.0f) {}

  void set_learning_rate(double lr) { lr_ = lr; }

  void step(std::span<float> params, std::span<const float> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const float g = grad[i];
      m_[i] = static_cast<float>(b1_ * m_[i] + (1.0 - b1_) * g);
      v_[i] = static_cast<float>(b2_ * v_[i] + (1.0 - b2_) * g * g);
      const double mhat = m_[i] / c1, vhat = v_[i] / c2;
      params[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  Buffer<float> m_, v_;
};

namespace detail {

/// Shuffled batches of patch indices; each batch holds patches of a single
/// size so variable-size crops never share a batch.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::pair<std::size_t, std::size_t>>& dims,
                                                          int batch_size, std::mt19937_64& rng) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> by_dims;
  for (std::size_t i = 0; i < dims.size(); ++i) by_dims[dims[i]].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [d, idx] : by_dims) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(batch_size)) {
      const auto e = std::min(idx.size(), s + static_cast<std::size_t>(batch_size));
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s), idx.begin() + static_cast<std::ptrdiff_t>(e));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochStats&, const ModelParameters<float>&)>;

/// Trains `model` in place semantics (a trained copy is returned). The loss
/// of a batch is lambda * mean(L_c) + mean(L_d). `on_epoch` runs after every
/// epoch, or every checkpoint_every epochs when that is positive.
inline TrainResult train(ModelParameters<float> model, const std::vector<TrainingPatch>& patches,
                         const TrainingConfig& cfg, const LossConfig& losses, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  losses.validate();
  if (patches.empty()) throw InputError("cannot train on an empty patch list");
  if (model.config.single_stage != cfg.ablation_single_stage) {
    throw ConfigError(std::string("ablation_single_stage is ") + (cfg.ablation_single_stage ? "true" : "false") +
                      " but the model was built " + (model.config.single_stage ? "single-stage" : "cascaded"));
  }
  const int groups = model.config.num_classes();
  if (!model.config.single_stage) {
    if (!losses.class_weights.empty() && static_cast<int>(losses.class_weights.size()) != groups)
      throw ConfigError("class weight count does not match the classifier width");
    for (const auto& p : patches) {
      if (p.group_label < 0 || p.group_label >= groups)
        throw InputError("patch from '" + p.source_id + "' has group label " + std::to_string(p.group_label) +
                         " outside [0, " + std::to_string(groups) + ")");
    }
  }

  const Architecture arch(model.config);
  std::vector<Grid<float>> images, targets;
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  images.reserve(patches.size());
  targets.reserve(patches.size());
  for (const auto& p : patches) {
    if (!p.image.same_shape(p.density)) throw InputError("patch from '" + p.source_id + "' has mismatched density size");
    images.push_back(pad_to_multiple_of_4(p.image));
    targets.push_back(pad_to_multiple_of_4(p.density));
    dims.emplace_back(images.back().height(), images.back().width());
  }

  TrainResult result{std::move(model), {}};
  auto& params = result.model;
  Adam adam(params.values.size(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
  Buffer<float> grad(params.values.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    const auto batches = detail::make_batches(dims, cfg.batch_size, rng);
    adam.set_learning_rate(cfg.learning_rate_at(epoch));
    double sum_l = 0.0, sum_c = 0.0, sum_d = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      const double scale = 1.0 / static_cast<double>(batch.size());
      std::vector<Buffer<float>> sample_grads(batch.size());
      std::vector<LossTerms> terms(batch.size());
      parallel_for(batch.size(), [&](std::size_t i) {
        const std::size_t k = batch[i];
        sample_grads[i].assign(params.values.size(), 0.0f);
        terms[i] = sample_loss<float>(params, arch, images[k], targets[k], patches[k].group_label, losses,
                                      sample_grads[i], scale);
      });
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!std::isfinite(terms[i].total)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                             " (patch from '" + patches[batch[i]].source_id + "')");
        }
        sum_l += terms[i].total;
        sum_c += terms[i].classification;
        sum_d += terms[i].density;
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += sample_grads[i][j];
      }
      for (float g : grad) {
        if (!std::isfinite(g))
          throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1));
      }
      adam.step(params.values, grad);
    }
    const double n = static_cast<double>(patches.size());
    EpochStats stats{epoch, sum_l / n, sum_c / n, sum_d / n};
    result.history.push_back(stats);
    if (on_epoch && (cfg.checkpoint_every <= 0 || epoch % cfg.checkpoint_every == 0)) on_epoch(stats, params);
  }
  return result;
}

}  // namespace cmtl
