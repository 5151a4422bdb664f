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


// Counting metrics and model evaluation on full images.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmtl/data_pipeline.hpp"
#include "cmtl/model.hpp"
#include "cmtl/parallel.hpp"

namespace cmtl {

struct ImageCount {
  std::string id;
  double true_count = 0.0;       // y_i
  double estimated_count = 0.0;  // y'_i
};

struct EvaluationReport {
  std::vector<ImageCount> per_image;
  double mae = 0.0;
  double mse = 0.0;  // root of the mean squared error
  std::size_t n = 0;
};

/// MAE = mean |y - y'|, MSE = sqrt(mean |y - y'|^2). Errors are summed in
/// ascending order so the result does not depend on the input order.
inline void compute_metrics(EvaluationReport& report) {
  report.n = report.per_image.size();
  if (report.n == 0) {
    report.mae = report.mse = 0.0;
    return;
  }
  std::vector<double> err;
  err.reserve(report.n);
  for (const auto& c : report.per_image) err.push_back(std::abs(c.true_count - c.estimated_count));
  std::sort(err.begin(), err.end());
  double sa = 0.0, ss = 0.0;
  for (double e : err) {
    sa += e;
    ss += e * e;
  }
  report.mae = sa / static_cast<double>(report.n);
  report.mse = std::sqrt(ss / static_cast<double>(report.n));
}

inline EvaluationReport make_report(std::vector<ImageCount> counts) {
  EvaluationReport r;
  r.per_image = std::move(counts);
  compute_metrics(r);
  return r;
}

/// Counting metrics from paired true and estimated counts.
inline EvaluationReport make_report(const std::vector<double>& truth, const std::vector<double>& estimate) {
  if (truth.size() != estimate.size()) throw InputError("true and estimated count lists differ in length");
  std::vector<ImageCount> c;
  for (std::size_t i = 0; i < truth.size(); ++i) c.push_back({std::to_string(i), truth[i], estimate[i]});
  return make_report(std::move(c));
}

/// Count estimate of one image: pad, run, crop back, sum of the positive part.
template <typename T>
double estimate_count(const ModelParameters<T>& model, const Architecture& arch, const Grid<float>& image,
                      ForwardOutputs<T>* outputs = nullptr) {
  const auto padded = pad_input(image);
  auto out = forward(model, arch, padded.image.cast<T>());
  const auto density = crop_to_original(out.density, padded.original_height, padded.original_width);
  double s = 0.0;
  for (T v : density.values()) s += std::max(0.0, static_cast<double>(v));
  if (outputs) {
    out.density = density;
    *outputs = std::move(out);
  }
  return s;
}

inline EvaluationReport evaluate(const ModelParameters<float>& model, const std::vector<DotAnnotatedImage>& images) {
  if (images.empty()) throw InputError("cannot evaluate on an empty image list");
  const Architecture arch(model.config);
  std::vector<ImageCount> counts(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    counts[i] = {images[i].id, static_cast<double>(images[i].heads.size()), estimate_count(model, arch, images[i].image)};
  });
  return make_report(std::move(counts));
}

/// Fraction of patches whose most probable count group equals the label.
/// Zero for single-stage models.
inline double classification_accuracy(const ModelParameters<float>& model, const std::vector<TrainingPatch>& patches) {
  if (patches.empty()) throw InputError("cannot score an empty patch list");
  if (model.config.single_stage) return 0.0;
  const Architecture arch(model.config);
  std::vector<int> hit(patches.size(), 0);
  parallel_for(patches.size(), [&](std::size_t i) {
    const auto out = forward(model, arch, pad_to_multiple_of_4(patches[i].image));
    const auto best = std::max_element(out.class_probs.begin(), out.class_probs.end()) - out.class_probs.begin();
    hit[i] = best == patches[i].group_label ? 1 : 0;
  });
  double s = 0.0;
  for (int h : hit) s += h;
  return s / static_cast<double>(patches.size());
}

/// "MAE 101.3, MSE 152.4"
inline std::string format_table_row(const EvaluationReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "MAE %.1f, MSE %.1f", r.mae, r.mse);
  return buf;
}

inline nlohmann::json report_to_json(const EvaluationReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : r.per_image)
    per.push_back({{"id", c.id}, {"true_count", c.true_count}, {"estimated_count", c.estimated_count}});
  return {{"per_image", per}, {"mae", r.mae}, {"mse", r.mse}, {"n", r.n}, {"table_row", format_table_row(r)}};
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
  EvaluationReport r;
  for (const auto& c : j.at("per_image"))
    r.per_image.push_back({c.at("id").get<std::string>(), c.at("true_count").get<double>(),
                           c.at("estimated_count").get<double>()});
  r.mae = j.at("mae").get<double>();
  r.mse = j.at("mse").get<double>();
  r.n = j.at("n").get<std::size_t>();
  return r;
}

inline void write_report(const std::filesystem::path& path, const EvaluationReport& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << report_to_json(r).dump(2) << "\n";
}

}  // namespace cmtl
