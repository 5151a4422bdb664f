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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "cmtl/ground_truth.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / ("cmtl_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args) {
  const auto log = work_dir() / "last_output.txt";
  const std::string cmd = std::string(CMTL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string path(const std::string& rel) { return (work_dir() / rel).string(); }

// A tiny dataset plus a one-epoch model shared by the later tests.
void ensure_trained() {
  static bool done = false;
  if (done) return;
  ASSERT_EQ(run("synth --n 4 --size 32x32 --count 0:6 --seed 3 --out " + path("data")).code, 0);
  std::ofstream(path("cfg.json")) << R"({"epochs": 1, "patches_per_image": 2})";
  const auto r = run("train --data " + path("data/manifest.json") + " --config " + path("cfg.json") +
                     " --seed 5 --out " + path("model"));
  ASSERT_EQ(r.code, 0) << r.out;
  done = true;
}

}  // namespace

TEST(Cli, NoSubcommandIsAUsageError) { EXPECT_EQ(run("").code, 2); }

TEST(Cli, UnknownSubcommandIsAUsageError) { EXPECT_EQ(run("frobnicate").code, 2); }

TEST(Cli, UnknownFlagIsAUsageError) { EXPECT_EQ(run("synth --bogus 1 --out " + path("x")).code, 2); }

TEST(Cli, MalformedSizeIsAUsageError) {
  const auto r = run("synth --size 64by64 --out " + path("x"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("64by64"), std::string::npos);
}

TEST(Cli, MissingOutIsAUsageError) { EXPECT_EQ(run("synth --n 1").code, 2); }

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run("--help").code, 0); }

TEST(Cli, SynthWritesManifestAndImages) {
  const auto r = run("synth --n 3 --size 40x48 --count 1:5 --seed 7 --out " + path("s1"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto doc = nlohmann::json::parse(slurp(path("s1/manifest.json")));
  ASSERT_EQ(doc.size(), 3u);
  for (const auto& e : doc) {
    EXPECT_TRUE(fs::exists(work_dir() / "s1" / e["image"].get<std::string>()));
    EXPECT_GE(e["heads"].size(), 1u);
    EXPECT_LE(e["heads"].size(), 5u);
  }
}

TEST(Cli, SynthIsReproducible) {
  ASSERT_EQ(run("synth --n 2 --size 32x32 --seed 9 --count 0:8 --out " + path("r1")).code, 0);
  ASSERT_EQ(run("synth --n 2 --size 32x32 --seed 9 --count 0:8 --out " + path("r2")).code, 0);
  for (const auto& f : fs::directory_iterator(work_dir() / "r1"))
    EXPECT_EQ(slurp(f.path()), slurp(work_dir() / "r2" / f.path().filename())) << f.path();
}

TEST(Cli, InfeasibleSynthIsADomainError) {
  EXPECT_EQ(run("synth --n 1 --size 16x16 --count 40:50 --out " + path("bad")).code, 1);
}

TEST(Cli, GenerateGtWritesDensityMaps) {
  ensure_trained();
  ASSERT_EQ(run("generate-gt --data " + path("data/manifest.json") + " --sigma 2 --out " + path("gt")).code, 0);
  const auto doc = nlohmann::json::parse(slurp(path("data/manifest.json")));
  for (const auto& e : doc) {
    const auto d = cmtl::read_dmap(work_dir() / "gt" / (e["id"].get<std::string>() + ".dmap"));
    EXPECT_NEAR(cmtl::count_from_density(d), static_cast<double>(e["heads"].size()), 1e-3);
  }
}

TEST(Cli, TrainWritesCheckpointAndHistory) {
  ensure_trained();
  EXPECT_TRUE(fs::exists(path("model/model.ckpt")));
  EXPECT_EQ(slurp(path("model/history.csv")).rfind("epoch,L,L_c,L_d\n", 0), 0u);
}

TEST(Cli, TrainIsReproducible) {
  ensure_trained();
  ASSERT_EQ(run("train --data " + path("data/manifest.json") + " --config " + path("cfg.json") +
                " --seed 5 --out " + path("model2"))
                .code,
            0);
  EXPECT_EQ(slurp(path("model/model.ckpt")), slurp(path("model2/model.ckpt")));
}

TEST(Cli, EvalWritesReportAndPrintsTableRow) {
  ensure_trained();
  const auto r = run("eval --model " + path("model/model.ckpt") + " --data " + path("data/manifest.json") +
                     " --out " + path("report.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("MAE "), std::string::npos);
  EXPECT_NE(r.out.find(", MSE "), std::string::npos);
  const auto j = nlohmann::json::parse(slurp(path("report.json")));
  EXPECT_TRUE(j.contains("mae"));
  EXPECT_TRUE(j.contains("mse"));
  EXPECT_EQ(j["per_image"].size(), 4u);
}

TEST(Cli, EvalMissingCheckpointNamesIt) {
  const auto r = run("eval --model " + path("nope.ckpt") + " --data " + path("data/manifest.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("nope.ckpt"), std::string::npos) << r.out;
}

TEST(Cli, SingleStageCheckpointLoadsForEval) {
  ensure_trained();
  ASSERT_EQ(run("train --single-stage --data " + path("data/manifest.json") + " --config " + path("cfg.json") +
                " --out " + path("single"))
                .code,
            0);
  EXPECT_EQ(run("eval --model " + path("single/model.ckpt") + " --data " + path("data/manifest.json") +
                " --out " + path("single_eval"))
                .code,
            0);
  EXPECT_TRUE(fs::exists(path("single_eval/report.json")));
}

TEST(Cli, InferAndRender) {
  ensure_trained();
  const auto r = run("infer --model " + path("model/model.ckpt") + " --data " + path("data/synth_0000.png") +
                     " --out " + path("inf"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto dmap = work_dir() / "inf" / "synth_0000.dmap";
  ASSERT_TRUE(fs::exists(dmap));
  const auto before = slurp(dmap);
  ASSERT_EQ(run("render --data " + dmap.string() + " --out " + path("rend")).code, 0);
  EXPECT_TRUE(fs::exists(path("rend/synth_0000.png")));
  EXPECT_EQ(slurp(dmap), before);
  EXPECT_EQ(slurp(path("rend/synth_0000.dmap")), before);
}

TEST(Cli, CrossvalWritesFoldReports) {
  ensure_trained();
  const auto r = run("crossval --folds 2 --data " + path("data/manifest.json") + " --config " + path("cfg.json") +
                     " --out " + path("cv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(path("cv/crossval.json")));
  EXPECT_EQ(j["folds"].size(), 2u);
  EXPECT_EQ(j["aggregate"]["n"], 4);
}
