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

// Acceptance gate: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>

#include "cmtl/cmtl.hpp"

using namespace cmtl;

namespace {

// Pinned thresholds.
constexpr double kMassTolerance = 1e-3;
constexpr double kMassRuntimeSeconds = 10.0;
constexpr double kMetricTolerance = 1e-4;
constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientLambda = 1e-4;
constexpr double kGradientRuntimeSeconds = 300.0;
constexpr double kProbSumTolerance = 1e-6;
constexpr double kBaselineFraction = 0.5;
constexpr double kAccuracyFloor = 0.25;
constexpr int kMaxEpochs = 30;
constexpr double kLearningRuntimeSeconds = 900.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome mass_conservation() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> side(32, 128), heads(0, 50);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = side(rng), w = side(rng);
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(w)), uy(0.0, static_cast<double>(h));
    HeadAnnotations s(static_cast<std::size_t>(heads(rng)));
    for (auto& p : s) p = {ux(rng), uy(rng)};
    GroundTruthConfig cfg;
    cfg.sigma = t % 2 == 0 ? 2.0 : 4.0;
    cfg.renormalize_truncated = true;
    const auto d = generate_density_map(h, w, s, cfg);
    const double n = static_cast<double>(s.size());
    worst = std::max(worst, std::abs(count_from_density(d) - n) / std::max(1.0, n));
  }
  const double secs = seconds_since(t0);
  return {worst < kMassTolerance && secs < kMassRuntimeSeconds,
          fmt("max relative mass error %.3g (< %.0e), %.2f s (< %.0f s)", worst, kMassTolerance, secs,
              kMassRuntimeSeconds)};
}

Outcome metric_oracle() {
  const auto r = make_report({10, 20, 30}, {12, 17, 30});
  const double mae_ref = (2.0 + 3.0 + 0.0) / 3.0, mse_ref = std::sqrt((4.0 + 9.0 + 0.0) / 3.0);
  bool ok = std::abs(r.mae - 1.6667) < kMetricTolerance && std::abs(r.mse - 2.0817) < kMetricTolerance &&
            r.mae == mae_ref && r.mse == mse_ref;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> truth(1 + rng() % 40), est;
    for (auto& v : truth) {
      v = u(rng);
      est.push_back(u(rng));
    }
    const auto q = make_report(truth, est);
    if (q.mse + 1e-12 < q.mae) ++violations;
  }
  ok = ok && violations == 0;
  return {ok, fmt("MAE %.6f MSE %.6f on the worked example; %d of 1000 random vectors with MSE < MAE", r.mae, r.mse,
                  violations)};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  NetworkConfig cfg;
  cfg.width_multiplier = 0.25;
  const auto model = build_model<double>(cfg, 3);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid<double> image(16, 16), target(16, 16);
  for (auto& v : image.values()) v = u(rng);
  for (auto& v : target.values()) v = 0.05 * u(rng);
  LossConfig loss;
  loss.lambda = kGradientLambda;
  GradientCheckOptions opt;
  opt.seed = 3;
  const auto r = check_gradients(model, image, target, 4, loss, opt);
  const double secs = seconds_since(t0);
  return {r.max_relative_error < kGradientTolerance && secs < kGradientRuntimeSeconds,
          fmt("max relative error %.3g (< %.0e) over %zu parameter groups, worst %s, %.1f s", r.max_relative_error,
              kGradientTolerance, r.groups.size(), r.worst_group.c_str(), secs)};
}

Outcome shape_contracts() {
  NetworkConfig cfg;
  cfg.width_multiplier = 0.25;
  const auto model = build_model(cfg, 4);
  const Architecture arch(cfg);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> side(4, 32);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::size_t spp_len = 0;
  double worst_sum = 0.0;
  bool ok = true;
  std::string sizes;
  for (int t = 0; t < 10; ++t) {
    const std::size_t h = 4 * side(rng), w = 4 * side(rng);
    Grid<float> img(h, w);
    for (auto& v : img.values()) v = u(rng);
    const auto out = forward(model, arch, img);
    ok = ok && out.density.height() == h && out.density.width() == w;
    if (t == 0) spp_len = out.spp.size();
    ok = ok && out.spp.size() == spp_len;
    double s = 0.0;
    for (float p : out.class_probs) s += p;
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    sizes += (t ? " " : "") + std::to_string(h) + "x" + std::to_string(w);
  }
  ok = ok && worst_sum < kProbSumTolerance;
  return {ok, fmt("sizes [%s]; SPP length %zu; max |sum(p) - 1| %.2g", sizes.c_str(), spp_len, worst_sum)};
}

Outcome augmentation_contract() {
  SynthConfig s;
  s.images = 1;
  s.height = 64;
  s.width = 48;
  s.seed = 5;
  const auto img = synthesize_dataset(s).front();
  GroundTruthConfig gt;
  const auto patches = make_patches(img, gt, 5);
  int counts[3] = {0, 0, 0};
  bool ordered = patches.size() == 300;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const int a = static_cast<int>(patches[i].augmentation);
    ++counts[a];
    ordered = ordered && a == static_cast<int>(i / 100);
  }
  bool mirrored = true;
  for (std::size_t i = 0; i < 100 && patches.size() == 300; ++i)
    mirrored = mirrored && hflip(patches[i].density) == patches[100 + i].density &&
               hflip(patches[i].image) == patches[100 + i].image;
  return {ordered && mirrored && counts[0] == 100 && counts[1] == 100 && counts[2] == 100,
          fmt("%zu patches, split %d/%d/%d (crop/flip/noise); flipped densities %s", patches.size(), counts[0],
              counts[1], counts[2], mirrored ? "exact mirrors" : "NOT exact mirrors")};
}

double mean_signed_error(const EvaluationReport& r) {
  double s = 0.0;
  for (const auto& c : r.per_image) s += c.estimated_count - c.true_count;
  return r.per_image.empty() ? 0.0 : s / static_cast<double>(r.per_image.size());
}

Outcome desk_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.images = 250;
  sc.height = 64;
  sc.width = 64;
  sc.count_lo = 0;
  sc.count_hi = 50;
  sc.seed = 7;
  const auto all = synthesize_dataset(sc);
  const std::vector<DotAnnotatedImage> train_set(all.begin(), all.begin() + 200), test_set(all.begin() + 200, all.end());

  double mean = 0.0;
  for (const auto& i : train_set) mean += static_cast<double>(i.heads.size());
  mean /= static_cast<double>(train_set.size());
  std::vector<double> truth, constant;
  for (const auto& i : test_set) {
    truth.push_back(static_cast<double>(i.heads.size()));
    constant.push_back(mean);
  }
  const double baseline = make_report(truth, constant).mae;

  PipelineConfig cfg = desk_scale_config();
  cfg.training.seed = 7;
  if (cfg.training.epochs > kMaxEpochs) return {false, "desk config exceeds the epoch budget"};
  const auto cascaded = train_pipeline(train_set, cfg);
  const auto cascaded_report = evaluate(cascaded.model, test_set);

  TrainingSet probe = build_training_set(test_set, cfg.ground_truth, cfg.patches, 99, cfg.patches_per_image, cfg.groups);
  relabel_patches(probe.patches, cascaded.boundaries);
  const double accuracy = classification_accuracy(cascaded.model, probe.patches);

  cfg.training.ablation_single_stage = true;
  const auto single = train_pipeline(train_set, cfg);
  const auto single_report = evaluate(single.model, test_set);
  const double secs = seconds_since(t0);

  const bool a = cascaded_report.mae < kBaselineFraction * baseline;
  const bool b = accuracy > kAccuracyFloor;
  const bool c = cascaded_report.mae <= single_report.mae;
  const bool t = secs < kLearningRuntimeSeconds;
  return {a && b && c && t,
          fmt("(a) %s cascaded MAE %.3f vs 0.5 x baseline %.3f; (b) %s test accuracy %.3f (> %.2f); "
              "(c) %s cascaded MAE %.3f <= single-stage MAE %.3f (mean signed error %+.3f vs %+.3f); "
              "%s %d epochs, %.0f s (< %.0f s)",
              a ? "ok" : "FAIL", cascaded_report.mae, kBaselineFraction * baseline, b ? "ok" : "FAIL", accuracy,
              kAccuracyFloor, c ? "ok" : "FAIL", cascaded_report.mae, single_report.mae,
              mean_signed_error(cascaded_report), mean_signed_error(single_report), t ? "ok" : "FAIL",
              cfg.training.epochs, secs, kLearningRuntimeSeconds)};
}

Outcome checkpoint_round_trip() {
  NetworkConfig cfg;
  cfg.width_multiplier = 0.25;
  const auto model = build_model(cfg, 8);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Grid<float> img(48, 40);
  for (auto& v : img.values()) v = u(rng);
  const auto before = forward(model, img);
  const auto path = std::filesystem::temp_directory_path() / ("cmtl_accept_" + std::to_string(::getpid()) + ".ckpt");
  save_checkpoint(model, path);
  const auto loaded = load_checkpoint(path, cfg);
  std::filesystem::remove(path);
  const auto after = forward(loaded, img);
  const bool density_same = std::memcmp(before.density.data(), after.density.data(),
                                        before.density.size() * sizeof(float)) == 0;
  const bool probs_same = before.class_probs == after.class_probs;
  return {density_same && probs_same && before.density.same_shape(after.density),
          fmt("density %s, class probabilities %s", density_same ? "bit-identical" : "DIFFER",
              probs_same ? "bit-identical" : "DIFFER")};
}

Outcome full_scale_hook() {
  // Format check only: the evaluation report renders in the table row layout.
  const auto r = make_report({100, 200}, {120, 150});
  const std::string row = format_table_row(r);
  const bool ok = row == "MAE 35.0, MSE 38.1" && report_to_json(r)["table_row"] == row;
  return {ok, "eval report row \"" + row + "\" (no numeric target at full scale)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 ground-truth mass conservation", mass_conservation},
      {"2 metric oracle", metric_oracle},
      {"3 gradient check", gradient_check},
      {"4 shape and SPP contracts", shape_contracts},
      {"5 augmentation contract", augmentation_contract},
      {"6 desk-scale learning", desk_learning},
      {"7 checkpoint round trip", checkpoint_round_trip},
      {"8 full-scale report hook", full_scale_hook},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
