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


// The cascaded network: shared convolutions feed a count-group classifier
// (the high-level prior, with spatial pyramid pooling so any input size maps
// to a fixed-length descriptor) and a density branch. The last prior
// feature maps are fused with the density branch and upsampled x4 back to
// input resolution by two fractionally strided convolutions.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmtl/errors.hpp"
#include "cmtl/layers.hpp"
#include "cmtl/tensor.hpp"

namespace cmtl {

struct ConvSpec {
  int maps = 0;
  int kernel = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Layer inventory. Pools (2x2, stride 2) follow the first two convolutions of
/// the prior and density stages. Map counts and FC widths other than the
/// final class count are scaled by width_multiplier (rounded up).
struct NetworkConfig {
  std::vector<ConvSpec> shared{{16, 9}, {32, 7}};
  std::vector<ConvSpec> prior_convs{{32, 7}, {32, 5}, {64, 5}, {64, 5}};
  std::vector<int> prior_fc{512, 256, 10};
  std::vector<int> spp_levels{1, 2, 4};
  std::vector<ConvSpec> density_convs{{20, 7}, {40, 5}, {20, 5}, {10, 5}};
  std::vector<ConvSpec> fusion_convs{{24, 3}, {32, 3}};
  std::vector<int> upsample{16, 18};
  double width_multiplier = 1.0;
  bool single_stage = false;
  int input_channels = 1;
  /// Expected fusion input channels; 0 derives it from the stages.
  int fusion_input_channels = 0;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;

  int scaled(int maps) const {
    return std::max(1, static_cast<int>(std::ceil(maps * width_multiplier - 1e-9)));
  }
  int num_classes() const { return prior_fc.empty() ? 0 : prior_fc.back(); }

  /// Channels entering the fusion convolutions.
  int derived_fusion_channels() const {
    const int density = density_convs.empty() ? 0 : scaled(density_convs.back().maps);
    const int prior = single_stage || prior_convs.empty() ? 0 : scaled(prior_convs.back().maps);
    return density + prior;
  }

  void validate() const {
    auto check_convs = [](const std::vector<ConvSpec>& convs, const char* what, std::size_t min) {
      if (convs.size() < min)
        throw ConfigError(std::string(what) + " needs at least " + std::to_string(min) + " layers");
      for (const auto& c : convs) {
        if (c.maps <= 0 || c.kernel <= 0)
          throw ConfigError(std::string(what) + ": map counts and kernel sizes must be positive");
        if (c.kernel % 2 == 0)
          throw ConfigError(std::string(what) + ": kernel sizes must be odd for same padding");
      }
    };
    if (!(width_multiplier > 0.0)) throw ConfigError("width_multiplier must be positive");
    if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
    check_convs(shared, "shared stage", 1);
    check_convs(density_convs, "density stage", 2);
    check_convs(fusion_convs, "fusion stage", 1);
    if (upsample.size() != 2) throw ConfigError("exactly two x2 upsampling layers are required");
    for (int m : upsample)
      if (m <= 0) throw ConfigError("upsampling map counts must be positive");
    if (!single_stage) {
      check_convs(prior_convs, "prior stage", 2);
      if (prior_fc.empty()) throw ConfigError("prior stage needs fully connected layers");
      for (int m : prior_fc)
        if (m <= 0) throw ConfigError("fully connected widths must be positive");
      if (num_classes() < 2) throw ConfigError("the classifier needs at least 2 groups");
      if (spp_levels.empty()) throw ConfigError("spp_levels must be non-empty");
      for (std::size_t i = 0; i < spp_levels.size(); ++i) {
        if (spp_levels[i] < 1) throw ConfigError("spp_levels must be positive");
        if (i > 0 && spp_levels[i] <= spp_levels[i - 1])
          throw ConfigError("spp_levels must be strictly ascending");
      }
    }
    if (fusion_input_channels != 0 && fusion_input_channels != derived_fusion_channels()) {
      throw ConfigError("fusion input channels mismatch: expected " +
                        std::to_string(derived_fusion_channels()) + " (density + prior outputs), got " +
                        std::to_string(fusion_input_channels));
    }
  }

  /// Smallest input side the prior stage's pyramid accepts.
  int min_input_side() const {
    const int finest = spp_levels.empty() ? 1 : spp_levels.back();
    return 4 * finest;
  }
};

inline void to_json(nlohmann::json& j, const ConvSpec& c) { j = nlohmann::json::array({c.maps, c.kernel}); }
inline void from_json(const nlohmann::json& j, ConvSpec& c) {
  c.maps = j.at(0).get<int>();
  c.kernel = j.at(1).get<int>();
}

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"shared", c.shared},
                     {"prior_convs", c.prior_convs},
                     {"prior_fc", c.prior_fc},
                     {"spp_levels", c.spp_levels},
                     {"density_convs", c.density_convs},
                     {"fusion_convs", c.fusion_convs},
                     {"upsample", c.upsample},
                     {"width_multiplier", c.width_multiplier},
                     {"single_stage", c.single_stage},
                     {"input_channels", c.input_channels},
                     {"fusion_input_channels", c.fusion_input_channels}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.shared = j.value("shared", d.shared);
  c.prior_convs = j.value("prior_convs", d.prior_convs);
  c.prior_fc = j.value("prior_fc", d.prior_fc);
  c.spp_levels = j.value("spp_levels", d.spp_levels);
  c.density_convs = j.value("density_convs", d.density_convs);
  c.fusion_convs = j.value("fusion_convs", d.fusion_convs);
  c.upsample = j.value("upsample", d.upsample);
  c.width_multiplier = j.value("width_multiplier", d.width_multiplier);
  c.single_stage = j.value("single_stage", d.single_stage);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.fusion_input_channels = j.value("fusion_input_channels", d.fusion_input_channels);
}

/// A named block of the flat parameter vector.
struct ParamSlot {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

enum class LayerKind { conv, upconv, linear };

/// Resolved layer: channel counts after width scaling plus slot indices.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  int in = 0;
  int out = 0;
  int kernel = 1;
  bool prelu = true;
  bool pool_after = false;
  int weight_slot = -1;
  int bias_slot = -1;
  int slope_slot = -1;
};

/// Resolved network topology, derived deterministically from a config.
struct Architecture {
  std::vector<LayerSpec> shared, prior_convs, prior_fc, density, fusion, upsample;
  LayerSpec output;
  std::vector<ParamSlot> slots;
  std::size_t total = 0;

  explicit Architecture(const NetworkConfig& cfg) {
    cfg.validate();
    int ch = cfg.input_channels;
    auto add_stage = [&](std::vector<LayerSpec>& stage, const std::string& prefix,
                         const std::vector<ConvSpec>& convs, int in, bool pools) {
      for (std::size_t i = 0; i < convs.size(); ++i) {
        LayerSpec l;
        l.name = prefix + ".conv" + std::to_string(i + 1);
        l.in = in;
        l.out = cfg.scaled(convs[i].maps);
        l.kernel = convs[i].kernel;
        l.pool_after = pools && i < 2;
        stage.push_back(l);
        in = l.out;
      }
      return in;
    };
    ch = add_stage(shared, "shared", cfg.shared, ch, false);
    const int shared_out = ch;
    int prior_out = 0;
    if (!cfg.single_stage) {
      prior_out = add_stage(prior_convs, "prior", cfg.prior_convs, shared_out, true);
      int in = static_cast<int>(nn::spp_length(prior_out, cfg.spp_levels));
      for (std::size_t i = 0; i < cfg.prior_fc.size(); ++i) {
        const bool last = i + 1 == cfg.prior_fc.size();
        LayerSpec l;
        l.name = "prior.fc" + std::to_string(i + 1);
        l.kind = LayerKind::linear;
        l.in = in;
        l.out = last ? cfg.prior_fc[i] : cfg.scaled(cfg.prior_fc[i]);
        l.prelu = !last;
        prior_fc.push_back(l);
        in = l.out;
      }
    }
    const int density_out = add_stage(density, "density", cfg.density_convs, shared_out, true);
    const int fused_in = density_out + prior_out;
    ch = add_stage(fusion, "fusion", cfg.fusion_convs, fused_in, false);
    for (std::size_t i = 0; i < cfg.upsample.size(); ++i) {
      LayerSpec l;
      l.name = "fusion.up" + std::to_string(i + 1);
      l.kind = LayerKind::upconv;
      l.in = ch;
      l.out = cfg.scaled(cfg.upsample[i]);
      l.kernel = nn::kUpsampleWindow.kernel;
      upsample.push_back(l);
      ch = l.out;
    }
    output.name = "output";
    output.in = ch;
    output.out = 1;
    output.kernel = 1;
    output.prelu = false;

    for (auto* stage : {&shared, &prior_convs, &prior_fc, &density, &fusion, &upsample})
      for (auto& l : *stage) register_layer(l);
    register_layer(output);
  }

  int slot_index(const std::string& name) const {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i].name == name) return static_cast<int>(i);
    return -1;
  }

 private:
  int add_slot(const std::string& name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    slots.push_back({name, std::move(shape), total, n});
    total += n;
    return static_cast<int>(slots.size() - 1);
  }

  void register_layer(LayerSpec& l) {
    switch (l.kind) {
      case LayerKind::conv:
        l.weight_slot = add_slot(l.name + ".weight", {l.out, l.in, l.kernel, l.kernel});
        break;
      case LayerKind::upconv:
        l.weight_slot = add_slot(l.name + ".weight", {l.in, l.out, l.kernel, l.kernel});
        break;
      case LayerKind::linear:
        l.weight_slot = add_slot(l.name + ".weight", {l.out, l.in});
        break;
    }
    l.bias_slot = add_slot(l.name + ".bias", {l.out});
    if (l.prelu) l.slope_slot = add_slot(l.name + ".prelu", {1});
  }
};

/// All learnable values in one flat buffer, partitioned by named slots.
template <typename T>
struct ModelParameters {
  NetworkConfig config;
  std::vector<ParamSlot> slots;
  Buffer<T> values;

  std::span<T> slot(std::size_t i) { return {values.data() + slots[i].offset, slots[i].size}; }
  std::span<const T> slot(std::size_t i) const {
    return {values.data() + slots[i].offset, slots[i].size};
  }

  template <typename U>
  ModelParameters<U> cast() const {
    ModelParameters<U> out{config, slots, Buffer<U>(values.size())};
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
    return out;
  }
};

/// Zero-mean Gaussian weights with std sqrt(gain / fan_in) (gain 2 before a
/// PReLU, 1 for linear outputs), zero biases, PReLU slopes 0.25.
template <typename T = float>
ModelParameters<T> build_model(const NetworkConfig& cfg, std::uint64_t seed) {
  const Architecture arch(cfg);
  ModelParameters<T> params{cfg, arch.slots, Buffer<T>(arch.total, T(0))};
  std::mt19937_64 rng(seed);

  auto init = [&](const LayerSpec& l) {
    int fan_in = 0;
    switch (l.kind) {
      case LayerKind::conv: fan_in = l.in * l.kernel * l.kernel; break;
      case LayerKind::upconv: fan_in = l.in * l.kernel * l.kernel / 4; break;
      case LayerKind::linear: fan_in = l.in; break;
    }
    const double gain = l.prelu ? 2.0 : 1.0;
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    for (auto& w : params.slot(static_cast<std::size_t>(l.weight_slot))) w = static_cast<T>(dist(rng));
    if (l.slope_slot >= 0) params.slot(static_cast<std::size_t>(l.slope_slot))[0] = T(0.25);
  };
  for (const auto* stage : {&arch.shared, &arch.prior_convs, &arch.prior_fc, &arch.density,
                            &arch.fusion, &arch.upsample})
    for (const auto& l : *stage) init(l);
  init(arch.output);
  return params;
}

template <typename T>
struct ForwardOutputs {
  Buffer<T> class_scores;   // empty for single-stage models
  Buffer<T> class_probs;    // softmax of class_scores
  Buffer<T> spp;            // pyramid descriptor fed to the classifier
  Grid<T> density;               // same size as the (padded) input
  Tensor<T> prior_features;      // last prior conv output, 1/4 resolution
};

/// Intermediate values retained by forward_trace() for backward().
template <typename T>
struct Trace {
  struct Step {
    Tensor<T> input;   // layer input
    Tensor<T> pre;     // pre-activation output
    std::vector<int> pool_argmax;
  };
  struct FcStep {
    Buffer<T> input;
    Buffer<T> pre;
  };
  std::vector<Step> shared, prior, density, fusion, upsample;
  Step output;
  std::vector<FcStep> fc;
  std::vector<int> spp_argmax;
  Tensor<T> prior_last;
  Tensor<T> density_last;
};

struct PaddedImage {
  Grid<float> image;
  std::size_t original_height = 0;
  std::size_t original_width = 0;
};

/// Zero-pads right and bottom up to the next multiple of 4.
template <typename T>
Grid<T> pad_to_multiple_of_4(const Grid<T>& image) {
  const std::size_t h = (image.height() + 3) / 4 * 4, w = (image.width() + 3) / 4 * 4;
  if (h == image.height() && w == image.width()) return image;
  Grid<T> out(h, w);
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x) out(y, x) = image(y, x);
  return out;
}

inline PaddedImage pad_input(const Grid<float>& image) {
  return {pad_to_multiple_of_4(image), image.height(), image.width()};
}

/// Crops a density predicted for a padded image back to the original size.
template <typename T>
Grid<T> crop_to_original(const Grid<T>& density, std::size_t height, std::size_t width) {
  return crop(density, 0, 0, height, width);
}

namespace detail {

template <typename T>
nn::LayerParams<const T> layer_params(const ModelParameters<T>& p, const LayerSpec& l) {
  return {p.values.data() + p.slots[l.weight_slot].offset, p.values.data() + p.slots[l.bias_slot].offset,
          l.slope_slot >= 0 ? p.values.data() + p.slots[l.slope_slot].offset : nullptr};
}

template <typename T>
nn::LayerParams<T> layer_grads(const ModelParameters<T>& p, const LayerSpec& l, std::span<T> grad) {
  return {grad.data() + p.slots[l.weight_slot].offset, grad.data() + p.slots[l.bias_slot].offset,
          l.slope_slot >= 0 ? grad.data() + p.slots[l.slope_slot].offset : nullptr};
}

template <typename T>
Tensor<T> run_layer(const ModelParameters<T>& p, const LayerSpec& l, Tensor<T> x,
                    typename Trace<T>::Step& step, Buffer<T>& scratch) {
  const auto lp = layer_params(p, l);
  Tensor<T> y = l.kind == LayerKind::upconv
                    ? nn::upconv_forward(x, lp.weight, lp.bias, l.out, scratch)
                    : nn::conv_forward(x, lp.weight, lp.bias, l.out, l.kernel, scratch);
  step.input = std::move(x);
  step.pre = y;
  if (l.prelu) nn::prelu_forward<T>(y.data, *lp.slope);
  if (!l.pool_after) return y;
  return nn::maxpool_forward(y, step.pool_argmax);
}

template <typename T>
Tensor<T> run_stack(const ModelParameters<T>& p, const std::vector<LayerSpec>& stack, Tensor<T> x,
                    std::vector<typename Trace<T>::Step>& steps, Buffer<T>& scratch) {
  steps.resize(stack.size());
  for (std::size_t i = 0; i < stack.size(); ++i) x = run_layer(p, stack[i], std::move(x), steps[i], scratch);
  return x;
}

/// Backpropagates through one layer; returns dL/d(input).
template <typename T>
Tensor<T> back_layer(const ModelParameters<T>& p, const LayerSpec& l, const typename Trace<T>::Step& step,
                     Tensor<T> dy, std::span<T> grad, Buffer<T>& scratch, bool need_dx = true) {
  if (l.pool_after) dy = nn::maxpool_backward(dy, step.pool_argmax, step.pre.channels, step.pre.height,
                                              step.pre.width);
  const auto lp = layer_params(p, l);
  const auto lg = layer_grads(p, l, grad);
  if (l.prelu) nn::prelu_backward<T>(step.pre.data, dy.data, *lp.slope, lg.slope);
  if (l.kind == LayerKind::upconv) return nn::upconv_backward(step.input, dy, lp.weight, lg.weight, lg.bias, scratch);
  return nn::conv_backward(step.input, dy, lp.weight, lg.weight, lg.bias, l.kernel, scratch, need_dx);
}

template <typename T>
Tensor<T> back_stack(const ModelParameters<T>& p, const std::vector<LayerSpec>& stack,
                     const std::vector<typename Trace<T>::Step>& steps, Tensor<T> dy, std::span<T> grad,
                     Buffer<T>& scratch, bool need_dx = true) {
  for (std::size_t i = stack.size(); i-- > 0;)
    dy = back_layer(p, stack[i], steps[i], std::move(dy), grad, scratch, need_dx || i > 0);
  return dy;
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += v.data[i];
}

}  // namespace detail

/// Runs the network and keeps every intermediate needed by backward().
/// Input sides must be multiples of 4 (see pad_input).
template <typename T>
ForwardOutputs<T> forward_trace(const ModelParameters<T>& params, const Architecture& arch,
                                const Grid<T>& image, Trace<T>& trace) {
  if (image.height() % 4 != 0 || image.width() % 4 != 0) {
    throw ContractError("input " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                        " is not divisible by 4; call pad_input first");
  }
  if (params.values.size() != arch.total)
    throw ContractError("parameter buffer does not match the architecture");
  Buffer<T> scratch;
  ForwardOutputs<T> out;

  Tensor<T> shared = detail::run_stack(params, arch.shared, to_tensor(image), trace.shared, scratch);

  if (!arch.prior_convs.empty()) {
    const int min_side = 4 * params.config.spp_levels.back();
    if (static_cast<int>(image.height()) < min_side || static_cast<int>(image.width()) < min_side) {
      throw InputError("input " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                       " is too small for the spatial pyramid (need >= " + std::to_string(min_side) + ")");
    }
    trace.prior_last = detail::run_stack(params, arch.prior_convs, shared, trace.prior, scratch);
    Buffer<T> v = nn::spp_forward<T>(trace.prior_last, params.config.spp_levels, &trace.spp_argmax);
    out.spp = v;
    trace.fc.resize(arch.prior_fc.size());
    for (std::size_t i = 0; i < arch.prior_fc.size(); ++i) {
      const auto& l = arch.prior_fc[i];
      const auto lp = detail::layer_params(params, l);
      trace.fc[i].input = std::move(v);
      v = nn::linear_forward<T>(trace.fc[i].input, lp.weight, lp.bias, l.out);
      trace.fc[i].pre = v;
      if (l.prelu) nn::prelu_forward<T>(v, *lp.slope);
    }
    out.class_scores = v;
    out.class_probs = nn::softmax<T>(out.class_scores);
    out.prior_features = trace.prior_last;
  } else {
    trace.prior.clear();
    trace.fc.clear();
    trace.prior_last = {};
  }

  trace.density_last = detail::run_stack(params, arch.density, std::move(shared), trace.density, scratch);
  Tensor<T> fused = trace.prior_last.channels > 0 ? nn::concat_channels(trace.density_last, trace.prior_last)
                                                  : trace.density_last;
  fused = detail::run_stack(params, arch.fusion, std::move(fused), trace.fusion, scratch);
  fused = detail::run_stack(params, arch.upsample, std::move(fused), trace.upsample, scratch);
  Tensor<T> d = detail::run_layer(params, arch.output, std::move(fused), trace.output, scratch);
  out.density = to_grid(d);
  return out;
}

template <typename T>
ForwardOutputs<T> forward(const ModelParameters<T>& params, const Architecture& arch, const Grid<T>& image) {
  Trace<T> trace;
  return forward_trace(params, arch, image, trace);
}

template <typename T>
ForwardOutputs<T> forward(const ModelParameters<T>& params, const Grid<T>& image) {
  return forward(params, Architecture(params.config), image);
}

/// Accumulates dL/dparams into `grad` given dL/d(class_scores) and
/// dL/d(density). Either upstream gradient may be empty (treated as zero).
template <typename T>
void backward(const ModelParameters<T>& params, const Architecture& arch, const Trace<T>& trace,
              std::span<const T> d_scores, const Grid<T>* d_density, std::span<T> grad) {
  if (grad.size() != params.values.size()) throw ContractError("gradient buffer size mismatch");
  Buffer<T> scratch;

  const auto& out_in = trace.output.input;
  Tensor<T> dy(1, out_in.height, out_in.width);
  if (d_density) std::copy(d_density->values().begin(), d_density->values().end(), dy.data.begin());

  dy = detail::back_layer(params, arch.output, trace.output, std::move(dy), grad, scratch);
  dy = detail::back_stack(params, arch.upsample, trace.upsample, std::move(dy), grad, scratch);
  dy = detail::back_stack(params, arch.fusion, trace.fusion, std::move(dy), grad, scratch);

  // Split the fused gradient into density-branch and prior-branch parts.
  const int cd = trace.density_last.channels;
  Tensor<T> d_density_last(cd, dy.height, dy.width);
  std::copy(dy.data.begin(), dy.data.begin() + static_cast<std::ptrdiff_t>(d_density_last.size()),
            d_density_last.data.begin());
  Tensor<T> d_shared = detail::back_stack(params, arch.density, trace.density, std::move(d_density_last), grad, scratch);

  if (!arch.prior_convs.empty()) {
    Tensor<T> d_prior_last(trace.prior_last.channels, dy.height, dy.width);
    std::copy(dy.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(cd) * dy.plane()),
              dy.data.end(), d_prior_last.data.begin());

    if (!d_scores.empty()) {
      Buffer<T> g(d_scores.begin(), d_scores.end());
      for (std::size_t i = arch.prior_fc.size(); i-- > 0;) {
        const auto& l = arch.prior_fc[i];
        const auto lp = detail::layer_params(params, l);
        const auto lg = detail::layer_grads(params, l, grad);
        if (l.prelu) nn::prelu_backward<T>(trace.fc[i].pre, g, *lp.slope, lg.slope);
        g = nn::linear_backward<T>(trace.fc[i].input, g, lp.weight, lg.weight, lg.bias);
      }
      detail::add_into(d_prior_last, nn::spp_backward<T>(g, trace.spp_argmax, trace.prior_last.channels,
                                                        trace.prior_last.height, trace.prior_last.width));
    }
    detail::add_into(d_shared, detail::back_stack(params, arch.prior_convs, trace.prior, std::move(d_prior_last),
                                                  grad, scratch));
  }
  detail::back_stack(params, arch.shared, trace.shared, std::move(d_shared), grad, scratch, false);
}

}  // namespace cmtl
