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


// Model checkpoints.
//
// Layout (all integers u32 little-endian):
//   "CMTL" | format version | header length | header JSON
//   | tensor count | per tensor: name length, name, rank, dims..., float32 LE data
// The header holds {"network": NetworkConfig, "metadata": {...}}.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cmtl/errors.hpp"
#include "cmtl/ground_truth.hpp"
#include "cmtl/model.hpp"

namespace cmtl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParameters<float> model;
  nlohmann::json metadata = nlohmann::json::object();
};

template <typename T>
std::string encode_checkpoint(const ModelParameters<T>& model, const nlohmann::json& metadata = nlohmann::json::object()) {
  std::string out = "CMTL";
  detail::put_u32(out, kCheckpointVersion);
  const std::string header = nlohmann::json{{"network", model.config}, {"metadata", metadata}}.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  detail::put_u32(out, static_cast<std::uint32_t>(model.slots.size()));
  for (std::size_t i = 0; i < model.slots.size(); ++i) {
    const auto& s = model.slots[i];
    detail::put_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out += s.name;
    detail::put_u32(out, static_cast<std::uint32_t>(s.shape.size()));
    for (int d : s.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : model.slot(i)) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

template <typename T>
void save_checkpoint(const ModelParameters<T>& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
  detail::write_file(path, encode_checkpoint(model, metadata));
}

namespace detail {

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    const auto v = get_u32(reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw LoadError(what_ + ": checkpoint is truncated");
  }
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + ")";
}

}  // namespace detail

/// Decodes a checkpoint. When `expected` is given, tensors are matched
/// against the architecture it implies and the first missing or mis-shaped
/// tensor is reported; otherwise the stored network config is used.
inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what,
                                    const NetworkConfig* expected = nullptr) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "CMTL") != 0) throw LoadError(what + ": not a checkpoint (bad magic)");
  detail::Reader r(bytes, what);
  r.str(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError(what + ": checkpoint format version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(what + ": corrupt checkpoint header: " + e.what());
  }

  struct Stored {
    std::vector<int> shape;
    std::vector<float> data;
  };
  std::vector<std::pair<std::string, Stored>> stored;
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    Stored s;
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      s.shape.push_back(static_cast<int>(r.u32()));
      n *= static_cast<std::size_t>(s.shape.back());
    }
    s.data.resize(n);
    for (auto& v : s.data) v = r.f32();
    stored.emplace_back(std::move(name), std::move(s));
  }
  if (!r.done()) throw LoadError(what + ": trailing bytes after the last tensor");

  Checkpoint ck;
  NetworkConfig stored_cfg;
  try {
    stored_cfg = header.at("network").get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(what + ": checkpoint header lacks a network config: " + e.what());
  }
  if (header.contains("metadata")) ck.metadata = header["metadata"];

  const NetworkConfig& cfg = expected ? *expected : stored_cfg;
  const Architecture arch(cfg);
  ck.model.config = cfg;
  ck.model.slots = arch.slots;
  ck.model.values.assign(arch.total, 0.0f);
  for (std::size_t i = 0; i < arch.slots.size(); ++i) {
    const auto& slot = arch.slots[i];
    auto it = std::find_if(stored.begin(), stored.end(), [&](const auto& e) { return e.first == slot.name; });
    if (it == stored.end())
      throw LoadError(what + ": shape mismatch: tensor " + slot.name + " " + detail::shape_string(slot.shape) +
                      " is missing from the checkpoint");
    if (it->second.shape != slot.shape) {
      throw LoadError(what + ": shape mismatch: tensor " + slot.name + " expected " +
                      detail::shape_string(slot.shape) + ", found " + detail::shape_string(it->second.shape));
    }
    std::copy(it->second.data.begin(), it->second.data.end(), ck.model.slot(i).begin());
  }
  if (stored.size() != arch.slots.size()) {
    for (const auto& [name, s] : stored) {
      if (arch.slot_index(name) < 0)
        throw LoadError(what + ": shape mismatch: unexpected tensor " + name + " in the checkpoint");
    }
  }
  return ck;
}

inline Checkpoint load_checkpoint_full(const std::filesystem::path& path, const NetworkConfig* expected = nullptr) {
  return decode_checkpoint(detail::read_file(path), path.string(), expected);
}

inline ModelParameters<float> load_checkpoint(const std::filesystem::path& path) {
  return load_checkpoint_full(path).model;
}

/// Loads into a caller-specified architecture; fails on the first tensor the
/// file does not provide with the expected shape.
inline ModelParameters<float> load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected) {
  return load_checkpoint_full(path, &expected).model;
}

}  // namespace cmtl
