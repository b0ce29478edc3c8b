// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: a JSON header describing named tensors plus a flat
// little-endian payload. Round-trips are bit-exact.
//
// Layout:  "AVFBLOB1" | u64 header length | header JSON | payload bytes
// Header:  {"tensors": [{"name", "dtype": "f32"|"f64", "shape", "offset",
//           "nbytes"}...], "meta": {...}}

#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "avfusion/errors.hpp"
#include "avfusion/tensor.hpp"

namespace avfusion {

struct BlobEntry {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  Shape shape;
  std::vector<std::uint8_t> bytes;
};

class Blob {
 public:
  nlohmann::json meta = nlohmann::json::object();

  template <typename S>
  void add(const std::string& name, const Tensor<S>& t) {
    BlobEntry e;
    e.name = name;
    e.dtype = sizeof(S) == 4 ? "f32" : "f64";
    e.shape = t.shape();
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.values().data());
    e.bytes.assign(raw, raw + t.size() * static_cast<Index>(sizeof(S)));
    entries_.push_back(std::move(e));
  }

  void add_raw(const std::string& name, const std::string& dtype, Shape shape,
               std::vector<std::uint8_t> bytes);

  bool has(const std::string& name) const { return find(name) != nullptr; }
  const BlobEntry* find(const std::string& name) const;
  const std::vector<BlobEntry>& entries() const { return entries_; }

  template <typename S>
  Tensor<S> tensor(const std::string& name) const {
    const BlobEntry* e = find(name);
    if (!e) throw ConfigError("blob: no tensor named '" + name + "'");
    const char* want = sizeof(S) == 4 ? "f32" : "f64";
    if (e->dtype != want) {
      throw ConfigError("blob: tensor '" + name + "' is " + e->dtype + ", requested " + want);
    }
    std::vector<S> v(e->bytes.size() / sizeof(S));
    std::memcpy(v.data(), e->bytes.data(), e->bytes.size());
    return Tensor<S>::from(e->shape, std::move(v));
  }

  void save(const std::string& path) const;
  static Blob load(const std::string& path);

 private:
  std::vector<BlobEntry> entries_;
};

}  // namespace avfusion
