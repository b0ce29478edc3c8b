// SPDX-License-Identifier: Apache-2.0
//
// Audio descriptor frontend: framing -> Hamming window -> power spectrum ->
// triangular mel filterbank -> log -> DCT-II, then fixed-length center
// crop/pad and chunking into snippets.

#pragma once

#include <vector>

#include "avfusion/tensor.hpp"
#include "avfusion/wav.hpp"

namespace avfusion {

struct MfccConfig {
  int frame_length = 400;  // samples (25 ms at 16 kHz)
  int hop = 160;           // samples (10 ms)
  int n_fft = 512;         // power of two >= frame_length
  int n_mels = 26;
  int n_mfcc = 13;
  double log_floor = 1e-10;

  void validate() const;
};

/// frames x n_mfcc coefficient matrix.
using MfccMatrix = RowMat<double>;

/// Power spectrum (bins 0..n_fft/2) of one zero-padded, windowed frame.
std::vector<double> power_spectrum(const std::vector<double>& frame, int n_fft);

/// Triangular mel filterbank weights, one row per filter over n_fft/2+1 bins.
RowMat<double> mel_filterbank(int n_mels, int n_fft, int sample_rate);

/// Center frequencies (Hz) of the mel filters.
std::vector<double> mel_center_frequencies(int n_mels, int sample_rate);

/// Plain (unnormalized) DCT-II keeping the first n_keep coefficients.
std::vector<double> dct2(const std::vector<double>& x, int n_keep);

MfccMatrix mfcc(const Waveform& w, const MfccConfig& cfg);

/// Fixed length q: center crop (left-biased on odd surplus) or cyclic
/// self-repetition when shorter.
MfccMatrix crop_pad(const MfccMatrix& m, Index q);

/// q rows divided into s contiguous equal chunks, temporal order preserved.
std::vector<MfccMatrix> snippetize(const MfccMatrix& m, int s);

}  // namespace avfusion
