// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "avfusion/blob.hpp"
#include "avfusion/mfcc.hpp"
#include "avfusion/rng.hpp"
#include "avfusion/wav.hpp"

using namespace avfusion;

namespace {

MfccConfig small_cfg() {
  MfccConfig cfg;
  cfg.frame_length = 64;
  cfg.hop = 32;
  cfg.n_fft = 64;
  cfg.n_mels = 10;
  cfg.n_mfcc = 6;
  return cfg;
}

// independent naive DFT, written from the definition
std::vector<double> dft_power_oracle(const std::vector<double>& frame, int n_fft) {
  std::vector<double> out(static_cast<std::size_t>(n_fft / 2 + 1));
  for (int k = 0; k <= n_fft / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < frame.size(); ++t) {
      re += frame[t] * std::cos(2.0 * M_PI * k * static_cast<double>(t) / n_fft);
      im -= frame[t] * std::sin(2.0 * M_PI * k * static_cast<double>(t) / n_fft);
    }
    out[static_cast<std::size_t>(k)] = (re * re + im * im) / n_fft;
  }
  return out;
}

}  // namespace

TEST_CASE("all-zero waveform: only coefficient 0 is nonzero") {
  MfccConfig cfg = small_cfg();
  Waveform w{std::vector<double>(256, 0.0), 16000};
  MfccMatrix m = mfcc(w, cfg);
  REQUIRE(m.rows() == 1 + (256 - cfg.frame_length) / cfg.hop);
  const double c0 = cfg.n_mels * std::log(cfg.log_floor);
  for (Index f = 0; f < m.rows(); ++f) {
    CHECK(m(f, 0) == doctest::Approx(c0).epsilon(1e-9));
    for (Index k = 1; k < m.cols(); ++k) CHECK(m(f, k) == doctest::Approx(0.0).scale(1.0));
  }
}

TEST_CASE("single-frame input yields exactly one row") {
  MfccConfig cfg = small_cfg();
  Waveform w{std::vector<double>(static_cast<std::size_t>(cfg.frame_length), 0.1), 16000};
  CHECK(mfcc(w, cfg).rows() == 1);

  w.samples.pop_back();
  CHECK_THROWS_AS(mfcc(w, cfg), ContractError);
}

TEST_CASE("library power spectrum matches the direct DFT oracle") {
  Rng rng(5);
  std::vector<double> frame(48);
  for (auto& v : frame) v = rng.normal();
  const auto lib = power_spectrum(frame, 64);
  const auto oracle = dft_power_oracle(frame, 64);
  REQUIRE(lib.size() == oracle.size());
  for (std::size_t k = 0; k < lib.size(); ++k) {
    CHECK(lib[k] == doctest::Approx(oracle[k]).epsilon(1e-9));
  }
}

TEST_CASE("pure sine at a mel center lands its energy in that filter") {
  const int sr = 16000, n_fft = 512, n_mels = 26;
  const auto centers = mel_center_frequencies(n_mels, sr);
  const RowMat<double> fb = mel_filterbank(n_mels, n_fft, sr);

  for (int target : {6, 12, 19}) {
    const double freq = centers[static_cast<std::size_t>(target)];
    std::vector<double> frame(400);
    for (std::size_t t = 0; t < frame.size(); ++t) {
      const double window = 0.54 - 0.46 * std::cos(2.0 * M_PI * t / (frame.size() - 1));
      frame[t] = std::sin(2.0 * M_PI * freq * static_cast<double>(t) / sr) * window;
    }
    const auto power = dft_power_oracle(frame, n_fft);
    Eigen::Map<const VecX<double>> pv(power.data(), static_cast<Index>(power.size()));
    VecX<double> energies = fb * pv;
    Index best = 0;
    energies.maxCoeff(&best);
    CHECK(best == target);
  }
}

TEST_CASE("crop_pad worked examples") {
  MfccMatrix m(12, 2);
  for (Index i = 0; i < m.rows(); ++i) {
    m(i, 0) = static_cast<double>(i);
    m(i, 1) = -static_cast<double>(i);
  }

  SUBCASE("exact length is identity") {
    MfccMatrix ten = m.topRows(10);
    CHECK(crop_pad(ten, 10) == ten);
  }
  SUBCASE("surplus 2 splits 1/1") {
    MfccMatrix out = crop_pad(m, 10);
    REQUIRE(out.rows() == 10);
    for (Index i = 0; i < 10; ++i) CHECK(out(i, 0) == static_cast<double>(i + 1));
  }
  SUBCASE("odd surplus is left-biased") {
    MfccMatrix out = crop_pad(m, 11);  // surplus 1 -> start at row 0
    CHECK(out(0, 0) == 0.0);
    CHECK(out(10, 0) == 10.0);
  }
  SUBCASE("shorter input cycles through itself") {
    MfccMatrix four = m.topRows(4);
    MfccMatrix out = crop_pad(four, 10);
    const double expect[10] = {0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
    for (Index i = 0; i < 10; ++i) CHECK(out(i, 0) == expect[i]);
  }
}

TEST_CASE("crop_pad is idempotent at the target length (property)") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const Index rows = 1 + static_cast<Index>(rng.below(20));
    const Index q = 1 + static_cast<Index>(rng.below(20));
    MfccMatrix m(rows, 3);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < 3; ++j) m(i, j) = rng.normal();
    }
    const MfccMatrix once = crop_pad(m, q);
    CHECK(crop_pad(once, q) == once);
  }
}

TEST_CASE("snippetize partitions the input") {
  MfccMatrix m(8, 3);
  Rng rng(29);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
  }

  auto chunks = snippetize(m, 4);
  REQUIRE(chunks.size() == 4);
  for (const auto& c : chunks) CHECK(c.rows() == 2);

  // concatenation reproduces the input bit-exactly
  MfccMatrix glued(8, 3);
  Index at = 0;
  for (const auto& c : chunks) {
    glued.middleRows(at, c.rows()) = c;
    at += c.rows();
  }
  CHECK(glued == m);

  CHECK(snippetize(m, 1)[0] == m);
  CHECK_THROWS_AS(snippetize(m, 3), ConfigError);
}

TEST_CASE("frame-aligned time reversal flips MFCC row order") {
  MfccConfig cfg = small_cfg();
  Rng rng(31);
  // length = frame + k*hop so the reversed frame grid coincides
  const int len = cfg.frame_length + 5 * cfg.hop;
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(static_cast<std::size_t>(len));
  for (auto& v : w.samples) v = 0.4 * rng.normal();

  Waveform rev = w;
  std::reverse(rev.samples.begin(), rev.samples.end());

  const MfccMatrix a = mfcc(w, cfg);
  const MfccMatrix b = mfcc(rev, cfg);
  REQUIRE(a.rows() == b.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      CHECK(a(i, j) == doctest::Approx(b(a.rows() - 1 - i, j)).epsilon(1e-9));
    }
  }

  // palindromic signal: reversal is identity, so rows must be symmetric
  Waveform pal = w;
  for (std::size_t i = 0; i < pal.samples.size() / 2; ++i) {
    pal.samples[pal.samples.size() - 1 - i] = pal.samples[i];
  }
  const MfccMatrix p = mfcc(pal, cfg);
  for (Index i = 0; i < p.rows(); ++i) {
    for (Index j = 0; j < p.cols(); ++j) {
      CHECK(p(i, j) == doctest::Approx(p(p.rows() - 1 - i, j)).epsilon(1e-9));
    }
  }
}

TEST_CASE("wav round trip") {
  Rng rng(37);
  Waveform w;
  w.sample_rate = 8000;
  w.samples.resize(300);
  for (auto& v : w.samples) v = std::clamp(0.5 * rng.normal(), -1.0, 1.0);

  const std::string path =
      (std::filesystem::temp_directory_path() / "avfusion_test_roundtrip.wav").string();
  write_wav(path, w);
  const Waveform back = read_wav(path);
  CHECK(back.sample_rate == 8000);
  REQUIRE(back.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    CHECK(back.samples[i] == doctest::Approx(w.samples[i]).epsilon(2e-4).scale(1.0));
  }
  std::remove(path.c_str());

  CHECK_THROWS_AS(read_wav("/nonexistent/file.wav"), ConfigError);
}

TEST_CASE("wav to MFCC blob and back, bit-exact") {
  MfccConfig cfg = small_cfg();
  Rng rng(41);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(320);
  for (auto& v : w.samples) v = std::clamp(0.3 * rng.normal(), -1.0, 1.0);

  const auto dir = std::filesystem::temp_directory_path();
  const std::string wav_path = (dir / "avfusion_test_feat.wav").string();
  const std::string blob_path = (dir / "avfusion_test_feat.blob").string();
  write_wav(wav_path, w);

  const MfccMatrix m = mfcc(read_wav(wav_path), cfg);
  std::vector<double> flat(m.data(), m.data() + m.size());
  Blob blob;
  blob.add("mfcc", Tensor<double>::from({m.rows(), m.cols()}, std::move(flat)));
  blob.save(blob_path);

  const Tensor<double> back = Blob::load(blob_path).tensor<double>("mfcc");
  REQUIRE(back.shape() == Shape{m.rows(), m.cols()});
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) CHECK(back.at(i, j) == m(i, j));
  }
  std::remove(wav_path.c_str());
  std::remove(blob_path.c_str());
}

TEST_CASE("mfcc config validation") {
  MfccConfig cfg = small_cfg();
  cfg.n_mfcc = cfg.n_mels + 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_cfg();
  cfg.n_fft = 63;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_cfg();
  cfg.n_fft = 32;  // < frame_length
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
