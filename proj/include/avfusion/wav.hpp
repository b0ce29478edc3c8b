// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace avfusion {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

/// Reads a single-channel 16-bit PCM WAV file.
Waveform read_wav(const std::string& path);

/// Writes samples (clipped to [-1, 1]) as 16-bit PCM mono.
void write_wav(const std::string& path, const Waveform& w);

}  // namespace avfusion
