// SPDX-License-Identifier: Apache-2.0

#include "avfusion/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "avfusion/errors.hpp"

namespace avfusion {

namespace {

std::uint32_t rd_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::ofstream& out, std::uint32_t v) {
  std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                       static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void wr_u16(std::ofstream& out, std::uint16_t v) {
  std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("wav: cannot open '" + path + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw ConfigError("wav: '" + path + "' is not a RIFF/WAVE file");
  }

  Waveform w;
  int bits = 0, channels = 0;
  bool have_fmt = false, have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t chunk_size = rd_u32(buf.data() + pos + 4);
    const std::uint8_t* body = buf.data() + pos + 8;
    if (pos + 8 + chunk_size > buf.size()) break;
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0 && chunk_size >= 16) {
      const std::uint16_t format = rd_u16(body);
      channels = rd_u16(body + 2);
      w.sample_rate = static_cast<int>(rd_u32(body + 4));
      bits = rd_u16(body + 14);
      if (format != 1) throw ConfigError("wav: only PCM (format 1) is supported");
      have_fmt = true;
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw ConfigError("wav: data chunk before fmt chunk");
      if (bits != 16 || channels != 1) {
        throw ConfigError("wav: expected 16-bit mono, got " + std::to_string(bits) + "-bit " +
                          std::to_string(channels) + "-channel");
      }
      const std::size_t count = chunk_size / 2;
      w.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const auto v = static_cast<std::int16_t>(rd_u16(body + 2 * i));
        w.samples[i] = static_cast<double>(v) / 32768.0;
      }
      have_data = true;
    }
    pos += 8 + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  if (!have_data) throw ConfigError("wav: no data chunk in '" + path + "'");
  if (w.samples.empty()) throw ConfigError("wav: empty data chunk in '" + path + "'");
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  if (w.samples.empty()) throw ContractError("wav: refusing to write empty waveform");
  if (w.sample_rate <= 0) throw ContractError("wav: sample rate must be positive");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("wav: cannot open '" + path + "' for writing");

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  wr_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  wr_u32(out, 16);
  wr_u16(out, 1);  // PCM
  wr_u16(out, 1);  // mono
  wr_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  wr_u32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
  wr_u16(out, 2);   // block align
  wr_u16(out, 16);  // bits
  out.write("data", 4);
  wr_u32(out, data_bytes);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto v = static_cast<std::int16_t>(std::lround(c * 32767.0));
    wr_u16(out, static_cast<std::uint16_t>(v));
  }
  if (!out) throw ConfigError("wav: write to '" + path + "' failed");
}

}  // namespace avfusion
