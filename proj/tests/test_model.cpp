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

#include <gtest/gtest.h>

#include <random>

#include "cmtl/gradient_check.hpp"
#include "cmtl/model.hpp"

using namespace cmtl;

namespace {

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.width_multiplier = 0.25;
  return cfg;
}

template <typename T>
Grid<T> random_image(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid<T> g(h, w);
  for (auto& v : g.values()) v = static_cast<T>(u(rng));
  return g;
}

const ParamSlot& find_slot(const ModelParameters<float>& m, const std::string& name) {
  for (const auto& s : m.slots)
    if (s.name == name) return s;
  throw std::out_of_range(name);
}

bool has_slot_with_prefix(const ModelParameters<float>& m, const std::string& prefix) {
  for (const auto& s : m.slots)
    if (s.name.rfind(prefix, 0) == 0) return true;
  return false;
}

}  // namespace

TEST(Model, DefaultFirstSharedConvShape) {
  const auto m = build_model(NetworkConfig{}, 1);
  EXPECT_EQ(find_slot(m, "shared.conv1.weight").shape, (std::vector<int>{16, 1, 9, 9}));
  EXPECT_EQ(find_slot(m, "shared.conv2.weight").shape, (std::vector<int>{32, 16, 7, 7}));
  EXPECT_EQ(find_slot(m, "prior.fc3.weight").shape, (std::vector<int>{10, 256}));
  EXPECT_EQ(find_slot(m, "fusion.conv1.weight").shape, (std::vector<int>{24, 74, 3, 3}));
  EXPECT_EQ(find_slot(m, "output.weight").shape, (std::vector<int>{1, 18, 1, 1}));
}

TEST(Model, WidthMultiplierHalvesMapsButNotClasses) {
  NetworkConfig cfg;
  cfg.width_multiplier = 0.5;
  const auto m = build_model(cfg, 1);
  EXPECT_EQ(find_slot(m, "shared.conv1.weight").shape, (std::vector<int>{8, 1, 9, 9}));
  EXPECT_EQ(find_slot(m, "density.conv1.weight").shape, (std::vector<int>{10, 16, 7, 7}));
  EXPECT_EQ(find_slot(m, "prior.fc1.weight").shape[0], 256);
  EXPECT_EQ(find_slot(m, "prior.fc3.weight").shape[0], 10);
}

TEST(Model, SameSeedIsBitIdentical) {
  const auto a = build_model(small_config(), 42), b = build_model(small_config(), 42);
  EXPECT_EQ(a.values, b.values);
  const auto c = build_model(small_config(), 43);
  EXPECT_NE(a.values, c.values);
}

TEST(Model, SingleStageHasNoPriorTensors) {
  NetworkConfig cfg = small_config();
  cfg.single_stage = true;
  const auto m = build_model(cfg, 1);
  EXPECT_FALSE(has_slot_with_prefix(m, "prior."));
  EXPECT_TRUE(has_slot_with_prefix(build_model(small_config(), 1), "prior."));
  std::mt19937_64 rng(1);
  const auto out = forward(m, random_image<float>(rng, 32, 32));
  EXPECT_TRUE(out.class_probs.empty());
  EXPECT_EQ(out.density.height(), 32u);
}

TEST(Model, FusionChannelMismatchIsAConfigError) {
  NetworkConfig cfg;
  cfg.fusion_input_channels = 50;
  try {
    build_model(cfg, 1);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("74"), std::string::npos) << msg;
    EXPECT_NE(msg.find("50"), std::string::npos) << msg;
  }
  cfg.fusion_input_channels = 74;
  EXPECT_NO_THROW(build_model(cfg, 1));
}

TEST(Forward, DefaultNetworkOn64x64) {
  const auto m = build_model(NetworkConfig{}, 3);
  std::mt19937_64 rng(3);
  const auto out = forward(m, random_image<float>(rng, 64, 64));
  EXPECT_EQ(out.density.height(), 64u);
  EXPECT_EQ(out.density.width(), 64u);
  EXPECT_EQ(out.class_probs.size(), 10u);
  EXPECT_EQ(out.spp.size(), 1344u);
  EXPECT_EQ(out.prior_features.height, 16);
}

TEST(Forward, ShapesPropagateForRandomSizes) {
  const auto m = build_model(small_config(), 4);
  const Architecture arch(m.config);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> side(4, 24);
  std::size_t spp_len = 0;
  for (int t = 0; t < 10; ++t) {
    const std::size_t h = 4 * side(rng), w = 4 * side(rng);
    const auto out = forward(m, arch, random_image<float>(rng, h, w));
    ASSERT_EQ(out.density.height(), h);
    ASSERT_EQ(out.density.width(), w);
    ASSERT_EQ(static_cast<std::size_t>(out.prior_features.height), h / 4);
    ASSERT_EQ(static_cast<std::size_t>(out.prior_features.width), w / 4);
    if (t == 0) spp_len = out.spp.size();
    ASSERT_EQ(out.spp.size(), spp_len) << h << "x" << w;
    double s = 0;
    for (float p : out.class_probs) {
      ASSERT_GE(p, 0.0f);
      s += p;
    }
    ASSERT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Forward, IsDeterministic) {
  const auto m = build_model(small_config(), 5);
  std::mt19937_64 rng(5);
  const auto img = random_image<float>(rng, 36, 28);
  const auto a = forward(m, img), b = forward(m, img);
  EXPECT_TRUE(a.density == b.density);
  EXPECT_EQ(a.class_probs, b.class_probs);
}

TEST(Forward, ZeroParametersGiveZeroDensity) {
  auto m = build_model(small_config(), 6);
  std::fill(m.values.begin(), m.values.end(), 0.0f);
  std::mt19937_64 rng(6);
  const auto out = forward(m, random_image<float>(rng, 32, 32));
  for (float v : out.density.values()) ASSERT_EQ(v, 0.0f);
  for (float p : out.class_probs) EXPECT_FLOAT_EQ(p, 0.1f);
}

TEST(Padding, MultiplesOfFourPassThrough) {
  const Grid<float> img(64, 64, 0.5f);
  const auto p = pad_input(img);
  EXPECT_TRUE(p.image == img);
}

TEST(Padding, PadsAndCropsBack) {
  std::mt19937_64 rng(7);
  const auto img = random_image<float>(rng, 63, 65);
  const auto p = pad_input(img);
  EXPECT_EQ(p.image.height(), 64u);
  EXPECT_EQ(p.image.width(), 68u);
  EXPECT_EQ(p.image(63, 67), 0.0f);
  EXPECT_TRUE(crop_to_original(p.image, p.original_height, p.original_width) == img);
  const auto m = build_model(small_config(), 7);
  const auto out = forward(m, p.image);
  const auto cropped = crop_to_original(out.density, p.original_height, p.original_width);
  EXPECT_EQ(cropped.height(), 63u);
  EXPECT_EQ(cropped.width(), 65u);
}

TEST(Forward, UnpaddedInputIsAContractError) {
  const auto m = build_model(small_config(), 8);
  try {
    forward(m, Grid<float>(63, 64));
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("pad_input"), std::string::npos);
  }
}

TEST(Forward, TooSmallForPyramidIsAnInputError) {
  const auto m = build_model(small_config(), 8);
  EXPECT_THROW(forward(m, Grid<float>(8, 32)), InputError);
}

TEST(Gradients, MatchFiniteDifferencesInEveryGroup) {
  std::mt19937_64 rng(9);
  for (bool single : {false, true}) {
    NetworkConfig cfg = small_config();
    cfg.single_stage = single;
    const auto m = build_model<double>(cfg, 9);
    const auto img = random_image<double>(rng, 16, 16);
    auto target = random_image<double>(rng, 16, 16);
    for (auto& v : target.values()) v *= 0.05;
    LossConfig loss;
    loss.lambda = 0.5;
    loss.class_weights = std::vector<double>(10, 1.0);
    loss.class_weights[3] = 1.7;
    GradientCheckOptions opt;
    opt.seed = 9;
    const auto r = check_gradients(m, img, target, 3, loss, opt);
    EXPECT_LT(r.max_relative_error, 1e-4) << "worst group " << r.worst_group;
    std::size_t prelu_groups = 0;
    for (const auto& g : r.groups) {
      EXPECT_GT(g.probed, 0u) << g.name;
      if (g.name.find(".prelu") != std::string::npos) ++prelu_groups;
    }
    EXPECT_GT(prelu_groups, single ? 8u : 14u);
  }
}

TEST(Gradients, ZeroSignalGivesZeroDensityGradient) {
  NetworkConfig cfg = small_config();
  cfg.single_stage = true;
  const auto m = build_model<double>(cfg, 10);
  std::mt19937_64 rng(10);
  const auto img = random_image<double>(rng, 16, 16);
  const auto target = forward(m, img).density;
  LossConfig loss;
  loss.lambda = 0.0;
  const auto g = loss_gradient(m, img, target, 0, loss);
  double norm = 0;
  for (double v : g) norm += v * v;
  EXPECT_LT(std::sqrt(norm), 1e-8);
}
