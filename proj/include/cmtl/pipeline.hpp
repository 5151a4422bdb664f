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


// End-to-end recipes: augment -> fit count groups -> train, and k-fold
// cross-validation on top of that.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmtl/checkpoint.hpp"
#include "cmtl/data_pipeline.hpp"
#include "cmtl/evaluate.hpp"
#include "cmtl/model.hpp"
#include "cmtl/train.hpp"

namespace cmtl {

struct PipelineConfig {
  GroundTruthConfig ground_truth;
  PatchConfig patches;
  std::size_t patches_per_image = 0;  // subsample of the 3 * crops patches, 0 keeps all
  int groups = kDefaultGroups;
  NetworkConfig network;
  TrainingConfig training;
  DensityNormalization density_normalization = DensityNormalization::per_pixel_mean;
};

/// Settings that train the tiny network on 64x64 synthetic crowds in a few
/// minutes on one CPU core.
inline PipelineConfig desk_scale_config() {
  PipelineConfig c;
  c.ground_truth.sigma = 2.0;
  c.patches_per_image = 8;
  c.network.width_multiplier = 0.25;
  c.training.learning_rate = 1e-3;
  c.training.epochs = 20;
  c.training.lr_schedule = "cosine";
  c.training.batch_size = 8;
  // Patches share one size here, and lambda = 1e-4 is calibrated against the
  // unnormalized norm; the per-pixel mean would let L_c dominate the trunk.
  c.density_normalization = DensityNormalization::per_image_sum;
  return c;
}

/// Overlays JSON fields on `base`. Training fields use TrainingConfig names at
/// the top level; "network" holds a NetworkConfig object.
inline PipelineConfig parse_pipeline_config(const nlohmann::json& j, PipelineConfig base = {}) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  try {
    from_json(j, base.training);
    if (j.contains("network")) {
      nlohmann::json merged = base.network;
      merged.update(j["network"]);
      base.network = merged.get<NetworkConfig>();
    }
    base.network.width_multiplier = j.value("width_multiplier", base.network.width_multiplier);
    base.ground_truth.sigma = j.value("sigma", base.ground_truth.sigma);
    base.ground_truth.renormalize_truncated = j.value("renormalize_truncated", base.ground_truth.renormalize_truncated);
    base.patches.crops = j.value("crops", base.patches.crops);
    base.patches.crop_fraction = j.value("crop_fraction", base.patches.crop_fraction);
    base.patches.noise_std = j.value("noise_std", base.patches.noise_std);
    base.patches_per_image = j.value("patches_per_image", base.patches_per_image);
    base.groups = j.value("groups", base.groups);
    if (j.contains("density_loss_normalization"))
      base.density_normalization = parse_density_normalization(j["density_loss_normalization"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  base.network.single_stage = base.training.ablation_single_stage;
  if (base.network.num_classes() != base.groups && !base.network.prior_fc.empty())
    base.network.prior_fc.back() = base.groups;
  return base;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_pipeline_config(j, std::move(base));
}

struct TrainedModel {
  ModelParameters<float> model;
  GroupBoundaries boundaries;
  ClassWeights class_weights;
  std::vector<EpochStats> history;

  nlohmann::json metadata() const {
    return {{"boundaries", boundaries}, {"class_weights", class_weights}};
  }
};

inline LossConfig make_loss_config(const PipelineConfig& cfg, const ClassWeights& weights) {
  return {cfg.training.lambda, weights, cfg.density_normalization};
}

/// Builds the augmented training set from `images` and trains a fresh model.
inline TrainedModel train_pipeline(const std::vector<DotAnnotatedImage>& images, const PipelineConfig& cfg,
                                   const EpochCallback& on_epoch = {}) {
  NetworkConfig net = cfg.network;
  net.single_stage = cfg.training.ablation_single_stage;
  const std::uint64_t seed = cfg.training.seed;
  const TrainingSet ts = build_training_set(images, cfg.ground_truth, cfg.patches, seed, cfg.patches_per_image, cfg.groups);
  auto model = build_model<float>(net, seed);
  auto result = train(std::move(model), ts.patches, cfg.training, make_loss_config(cfg, ts.class_weights), on_epoch);
  return {std::move(result.model), ts.boundaries, ts.class_weights, std::move(result.history)};
}

/// fold_of[i] in [0, k); a seeded permutation is cut into k contiguous runs
/// whose sizes differ by at most one.
inline std::vector<int> fold_assignment(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw InputError("cross-validation needs at least 2 folds");
  if (n < static_cast<std::size_t>(k))
    throw InputError("cannot split " + std::to_string(n) + " images into " + std::to_string(k) + " folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t p = 0; p < n; ++p) fold[order[p]] = static_cast<int>(p * static_cast<std::size_t>(k) / n);
  return fold;
}

struct CrossValidationResult {
  std::vector<int> fold_of;
  std::vector<EvaluationReport> folds;
  EvaluationReport pooled;  // metrics over every held-out image
};

inline CrossValidationResult cross_validate(const std::vector<DotAnnotatedImage>& images, int k, const PipelineConfig& cfg) {
  CrossValidationResult r;
  r.fold_of = fold_assignment(images.size(), k, cfg.training.seed);
  std::vector<ImageCount> pooled;
  for (int f = 0; f < k; ++f) {
    std::vector<DotAnnotatedImage> train_set, test_set;
    for (std::size_t i = 0; i < images.size(); ++i) (r.fold_of[i] == f ? test_set : train_set).push_back(images[i]);
    PipelineConfig fold_cfg = cfg;
    fold_cfg.training.seed = mix_seed(cfg.training.seed, static_cast<std::uint64_t>(f));
    const auto trained = train_pipeline(train_set, fold_cfg);
    r.folds.push_back(evaluate(trained.model, test_set));
    pooled.insert(pooled.end(), r.folds.back().per_image.begin(), r.folds.back().per_image.end());
  }
  r.pooled = make_report(std::move(pooled));
  return r;
}

inline nlohmann::json cross_validation_to_json(const CrossValidationResult& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) folds.push_back(report_to_json(f));
  return {{"folds", folds}, {"aggregate", report_to_json(r.pooled)}};
}

}  // namespace cmtl
