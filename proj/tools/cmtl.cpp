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

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>

#include "cmtl/cmtl.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::uint64_t seed = 0;
  std::string out, config, model, data, size = "64x64", count = "0:50";
  bool single_stage = false;
  double sigma = 0.0;
  int folds = 5;
  std::size_t n = 200;
  double radius = 2.0;
  int epochs = 0;
};

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  static const std::regex re(R"((\d+)[xX](\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("--size expects HxW, got '" + s + "'");
  return {std::stoul(m[1]), std::stoul(m[2])};
}

std::pair<int, int> parse_range(const std::string& s) {
  static const std::regex re(R"((\d+):(\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("--count expects lo:hi, got '" + s + "'");
  return {std::stoi(m[1]), std::stoi(m[2])};
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

fs::path out_dir(const Options& o) {
  require(o.out, "--out");
  fs::create_directories(o.out);
  return o.out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw cmtl::IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

cmtl::PipelineConfig pipeline_config(const Options& o, const CLI::App& sub) {
  cmtl::PipelineConfig cfg = cmtl::desk_scale_config();
  if (!o.config.empty()) cfg = cmtl::load_pipeline_config(o.config, cfg);
  if (sub.count("--seed")) cfg.training.seed = o.seed;
  if (sub.count("--sigma")) cfg.ground_truth.sigma = o.sigma;
  if (sub.count("--epochs")) cfg.training.epochs = o.epochs;
  if (o.single_stage) cfg.training.ablation_single_stage = true;
  cfg.network.single_stage = cfg.training.ablation_single_stage;
  return cfg;
}

std::vector<cmtl::DotAnnotatedImage> load_images(const std::string& data) {
  require(data, "--data");
  return cmtl::load_dataset(data);
}

int cmd_synth(const Options& o) {
  cmtl::SynthConfig s;
  std::tie(s.height, s.width) = parse_size(o.size);
  std::tie(s.count_lo, s.count_hi) = parse_range(o.count);
  s.images = o.n;
  s.blob_radius = o.radius;
  s.seed = o.seed;
  const auto dir = out_dir(o);
  const auto manifest = cmtl::save_dataset(cmtl::synthesize_dataset(s), dir);
  std::cout << manifest.string() << "\n";
  return kExitOk;
}

int cmd_generate_gt(const Options& o, const CLI::App& sub) {
  const auto images = load_images(o.data);
  cmtl::GroundTruthConfig gt;
  if (sub.count("--sigma")) gt.sigma = o.sigma;
  const auto dir = out_dir(o);
  for (const auto& img : images) {
    const auto d = cmtl::generate_density_map(img.image, img.heads, gt);
    cmtl::write_dmap(dir / (img.id + ".dmap"), d);
  }
  std::cout << "wrote " << images.size() << " density maps to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, const CLI::App& sub) {
  const auto cfg = pipeline_config(o, sub);
  const auto images = load_images(o.data);
  const auto dir = out_dir(o);
  const auto trained = cmtl::train_pipeline(images, cfg, [](const cmtl::EpochStats& s, const auto&) {
    std::fprintf(stderr, "epoch %d  L %.6g  L_c %.6g  L_d %.6g\n", s.epoch, s.loss, s.classification, s.density);
  });
  auto meta = trained.metadata();
  meta["training"] = cfg.training;
  meta["sigma"] = cfg.ground_truth.sigma;
  meta["density_loss_normalization"] = cmtl::to_string(cfg.density_normalization);
  cmtl::save_checkpoint(trained.model, dir / "model.ckpt", meta);
  cmtl::write_history_csv(dir / "history.csv", trained.history);
  std::cout << (dir / "model.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o) {
  require(o.model, "--model");
  const auto model = cmtl::load_checkpoint(o.model);
  const auto report = cmtl::evaluate(model, load_images(o.data));
  if (!o.out.empty()) {
    fs::path path = o.out;
    if (path.extension() != ".json") {
      fs::create_directories(path);
      path /= "report.json";
    } else if (path.has_parent_path()) {
      fs::create_directories(path.parent_path());
    }
    cmtl::write_report(path, report);
  }
  std::cout << cmtl::format_table_row(report) << "\n";
  return kExitOk;
}

int cmd_crossval(const Options& o, const CLI::App& sub) {
  const auto cfg = pipeline_config(o, sub);
  const auto images = load_images(o.data);
  const auto dir = out_dir(o);
  const auto r = cmtl::cross_validate(images, o.folds, cfg);
  write_json(dir / "crossval.json", cmtl::cross_validation_to_json(r));
  for (std::size_t f = 0; f < r.folds.size(); ++f)
    std::cout << "fold " << f + 1 << ": " << cmtl::format_table_row(r.folds[f]) << "\n";
  std::cout << "aggregate: " << cmtl::format_table_row(r.pooled) << "\n";
  return kExitOk;
}

int cmd_infer(const Options& o) {
  require(o.model, "--model");
  require(o.data, "--data");
  const auto model = cmtl::load_checkpoint(o.model);
  std::vector<cmtl::DotAnnotatedImage> images;
  if (fs::path(o.data).extension() == ".png")
    images.push_back({cmtl::read_png_gray(o.data), {}, fs::path(o.data).stem().string()});
  else
    images = cmtl::load_dataset(o.data);
  const auto dir = out_dir(o);
  const cmtl::Architecture arch(model.config);
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& img : images) {
    cmtl::ForwardOutputs<float> out;
    const double count = cmtl::estimate_count(model, arch, img.image, &out);
    cmtl::render_density(out.density, dir / (img.id + ".png"));
    counts.push_back({{"id", img.id}, {"estimated_count", count}});
    std::cout << img.id << " " << count << "\n";
  }
  write_json(dir / "counts.json", counts);
  return kExitOk;
}

int cmd_render(const Options& o) {
  require(o.data, "--data");
  const auto map = cmtl::read_dmap(o.data);
  const auto dir = out_dir(o);
  const auto png = dir / (fs::path(o.data).stem().string() + ".png");
  cmtl::render_density(map, png);
  std::cout << png.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded multi-task crowd counting"};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* s) { s->add_option("--seed", o.seed, "random seed"); };
  auto add_out = [&](CLI::App* s) { s->add_option("--out", o.out, "output directory"); };
  auto add_data = [&](CLI::App* s) { s->add_option("--data", o.data, "dataset manifest"); };
  auto add_training = [&](CLI::App* s) {
    add_seed(s);
    add_out(s);
    add_data(s);
    s->add_option("--config", o.config, "training config JSON");
    s->add_flag("--single-stage", o.single_stage, "train without the high-level prior stage");
    s->add_option("--sigma", o.sigma, "ground-truth Gaussian sigma");
    s->add_option("--epochs", o.epochs, "override the configured epoch count");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dot-annotated dataset");
  add_seed(synth);
  add_out(synth);
  synth->add_option("--n", o.n, "number of images");
  synth->add_option("--size", o.size, "image size HxW");
  synth->add_option("--count", o.count, "head count range lo:hi");
  synth->add_option("--radius", o.radius, "blob radius in pixels");

  auto* gen = app.add_subcommand("generate-gt", "write ground-truth density maps");
  add_out(gen);
  add_data(gen);
  gen->add_option("--sigma", o.sigma, "Gaussian sigma");

  auto* train = app.add_subcommand("train", "train a model");
  add_training(train);

  auto* eval = app.add_subcommand("eval", "evaluate a model on a dataset");
  add_out(eval);
  add_data(eval);
  eval->add_option("--model", o.model, "checkpoint");

  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation");
  add_training(crossval);
  crossval->add_option("--folds", o.folds, "number of folds");

  auto* infer = app.add_subcommand("infer", "estimate density maps and counts");
  add_out(infer);
  add_data(infer);
  infer->add_option("--model", o.model, "checkpoint");

  auto* render = app.add_subcommand("render", "render a DMAP file as a false-color PNG");
  add_out(render);
  add_data(render);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (gen->parsed()) return cmd_generate_gt(o, *gen);
    if (train->parsed()) return cmd_train(o, *train);
    if (eval->parsed()) return cmd_eval(o);
    if (crossval->parsed()) return cmd_crossval(o, *crossval);
    if (infer->parsed()) return cmd_infer(o);
    if (render->parsed()) return cmd_render(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cmtl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}
