// SPDX-License-Identifier: Apache-2.0

#include "avfusion/blob.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "blob payload is little-endian; big-endian hosts are unsupported");

namespace avfusion {

namespace {
constexpr char kMagic[8] = {'A', 'V', 'F', 'B', 'L', 'O', 'B', '1'};
}

void Blob::add_raw(const std::string& name, const std::string& dtype, Shape shape,
                   std::vector<std::uint8_t> bytes) {
  if (dtype != "f32" && dtype != "f64") {
    throw ConfigError("blob: unknown dtype '" + dtype + "'");
  }
  const std::size_t want =
      static_cast<std::size_t>(shape_size(shape)) * (dtype == "f32" ? 4 : 8);
  if (bytes.size() != want) {
    throw ConfigError("blob: tensor '" + name + "' payload size mismatch");
  }
  entries_.push_back(BlobEntry{name, dtype, std::move(shape), std::move(bytes)});
}

const BlobEntry* Blob::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void Blob::save(const std::string& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    header["tensors"].push_back({{"name", e.name},
                                 {"dtype", e.dtype},
                                 {"shape", e.shape},
                                 {"offset", offset},
                                 {"nbytes", e.bytes.size()}});
    offset += e.bytes.size();
  }
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("blob: cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& e : entries_) {
    out.write(reinterpret_cast<const char*>(e.bytes.data()),
              static_cast<std::streamsize>(e.bytes.size()));
  }
  if (!out) throw ConfigError("blob: write to '" + path + "' failed");
}

Blob Blob::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("blob: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError("blob: '" + path + "' is not a tensor blob");
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw ConfigError("blob: truncated header in '" + path + "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("blob: malformed header in '" + path + "': " + e.what());
  }

  Blob blob;
  blob.meta = header.value("meta", nlohmann::json::object());
  std::vector<std::uint8_t> payload((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
  for (const auto& t : header.at("tensors")) {
    const std::uint64_t off = t.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = t.at("nbytes").get<std::uint64_t>();
    if (off + nbytes > payload.size()) {
      throw ConfigError("blob: truncated payload in '" + path + "'");
    }
    blob.add_raw(t.at("name").get<std::string>(), t.at("dtype").get<std::string>(),
                 t.at("shape").get<Shape>(),
                 {payload.begin() + static_cast<std::ptrdiff_t>(off),
                  payload.begin() + static_cast<std::ptrdiff_t>(off + nbytes)});
  }
  return blob;
}

}  // namespace avfusion
