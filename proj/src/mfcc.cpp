// SPDX-License-Identifier: Apache-2.0

#include "avfusion/mfcc.hpp"

#include <cmath>

#include "avfusion/errors.hpp"

namespace avfusion {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

void MfccConfig::validate() const {
  if (frame_length <= 0 || hop <= 0 || n_fft <= 0 || n_mels <= 0 || n_mfcc <= 0 ||
      log_floor <= 0.0) {
    throw ConfigError("mfcc: all config values must be positive");
  }
  if (n_fft < frame_length) throw ConfigError("mfcc: n_fft must be >= frame_length");
  if ((n_fft & (n_fft - 1)) != 0) throw ConfigError("mfcc: n_fft must be a power of two");
  if (n_mfcc > n_mels) throw ConfigError("mfcc: n_mfcc must be <= n_mels");
}

std::vector<double> power_spectrum(const std::vector<double>& frame, int n_fft) {
  const int bins = n_fft / 2 + 1;
  std::vector<double> power(static_cast<std::size_t>(bins), 0.0);
  const int n = static_cast<int>(frame.size());
  for (int k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    for (int t = 0; t < n; ++t) {
      const double phase = 2.0 * M_PI * k * t / n_fft;
      re += frame[static_cast<std::size_t>(t)] * std::cos(phase);
      im -= frame[static_cast<std::size_t>(t)] * std::sin(phase);
    }
    power[static_cast<std::size_t>(k)] = (re * re + im * im) / n_fft;
  }
  return power;
}

std::vector<double> mel_center_frequencies(int n_mels, int sample_rate) {
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(static_cast<std::size_t>(n_mels));
  for (int m = 1; m <= n_mels; ++m) {
    centers[static_cast<std::size_t>(m - 1)] = mel_to_hz(mel_max * m / (n_mels + 1));
  }
  return centers;
}

RowMat<double> mel_filterbank(int n_mels, int n_fft, int sample_rate) {
  const int bins = n_fft / 2 + 1;
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  // n_mels + 2 edge points, equally spaced on the mel scale from 0 to sr/2
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_max * i / (n_mels + 1));
  }
  RowMat<double> fb = RowMat<double>::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      if (f > lo && f < mid) {
        fb(m, k) = (f - lo) / (mid - lo);
      } else if (f >= mid && f < hi) {
        fb(m, k) = (hi - f) / (hi - mid);
      }
    }
  }
  return fb;
}

std::vector<double> dct2(const std::vector<double>& x, int n_keep) {
  const int n = static_cast<int>(x.size());
  if (n_keep > n) throw ContractError("dct2: cannot keep more coefficients than inputs");
  std::vector<double> out(static_cast<std::size_t>(n_keep), 0.0);
  for (int k = 0; k < n_keep; ++k) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      acc += x[static_cast<std::size_t>(j)] * std::cos(M_PI * k * (j + 0.5) / n);
    }
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

MfccMatrix mfcc(const Waveform& w, const MfccConfig& cfg) {
  cfg.validate();
  if (w.samples.empty()) throw ContractError("mfcc: empty waveform");
  if (w.sample_rate <= 0) throw ContractError("mfcc: sample rate must be positive");
  const int len = static_cast<int>(w.samples.size());
  if (len < cfg.frame_length) {
    throw ContractError("mfcc: waveform of " + std::to_string(len) +
                        " samples is shorter than one frame (" +
                        std::to_string(cfg.frame_length) + ")");
  }
  const int n_frames = 1 + (len - cfg.frame_length) / cfg.hop;

  std::vector<double> window(static_cast<std::size_t>(cfg.frame_length));
  for (int i = 0; i < cfg.frame_length; ++i) {
    window[static_cast<std::size_t>(i)] =
        0.54 - 0.46 * std::cos(2.0 * M_PI * i / (cfg.frame_length - 1));
  }
  const RowMat<double> fb = mel_filterbank(cfg.n_mels, cfg.n_fft, w.sample_rate);

  MfccMatrix out(n_frames, cfg.n_mfcc);
  std::vector<double> frame(static_cast<std::size_t>(cfg.frame_length));
  for (int f = 0; f < n_frames; ++f) {
    const int start = f * cfg.hop;
    for (int i = 0; i < cfg.frame_length; ++i) {
      frame[static_cast<std::size_t>(i)] =
          w.samples[static_cast<std::size_t>(start + i)] * window[static_cast<std::size_t>(i)];
    }
    const std::vector<double> power = power_spectrum(frame, cfg.n_fft);
    Eigen::Map<const VecX<double>> pv(power.data(), static_cast<Index>(power.size()));

    std::vector<double> log_mel(static_cast<std::size_t>(cfg.n_mels));
    Eigen::Map<VecX<double>> lm(log_mel.data(), cfg.n_mels);
    lm = ((fb * pv).array() + cfg.log_floor).log();

    const std::vector<double> coeffs = dct2(log_mel, cfg.n_mfcc);
    for (int k = 0; k < cfg.n_mfcc; ++k) out(f, k) = coeffs[static_cast<std::size_t>(k)];
  }
  return out;
}

MfccMatrix crop_pad(const MfccMatrix& m, Index q) {
  if (q < 1) throw ContractError("crop_pad: target length must be >= 1");
  if (m.rows() < 1) throw ContractError("crop_pad: empty input");
  const Index frames = m.rows();
  if (frames == q) return m;
  if (frames > q) {
    // centered, left-biased on odd surplus
    const Index start = (frames - q) / 2;
    return m.middleRows(start, q);
  }
  // self-padding: cyclic repetition of the available rows
  MfccMatrix out(q, m.cols());
  for (Index i = 0; i < q; ++i) out.row(i) = m.row(i % frames);
  return out;
}

std::vector<MfccMatrix> snippetize(const MfccMatrix& m, int s) {
  if (s < 1) throw ConfigError("snippetize: snippet count must be >= 1");
  if (m.rows() % s != 0) {
    throw ConfigError("snippetize: " + std::to_string(m.rows()) + " rows not divisible into " +
                      std::to_string(s) + " snippets");
  }
  const Index chunk = m.rows() / s;
  std::vector<MfccMatrix> out;
  out.reserve(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) out.push_back(m.middleRows(i * chunk, chunk));
  return out;
}

}  // namespace avfusion
