// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <vector>

#include "avfusion/encoders.hpp"

using namespace avfusion;

namespace {

EncoderConfig small_cfg() {
  EncoderConfig cfg;
  cfg.snippets = 4;
  cfg.channels = 16;
  cfg.hidden = 6;
  cfg.frames = 2;
  cfg.height = 4;
  cfg.width = 4;
  cfg.mfcc_rows = 8;
  cfg.n_mfcc = 13;
  return cfg;
}

std::vector<Tensor<double>> visual_snippets(const EncoderConfig& cfg, Rng* rng) {
  std::vector<Tensor<double>> out;
  for (int i = 0; i < cfg.snippets; ++i) {
    Shape shape{cfg.frames, cfg.height, cfg.width, 3};
    out.push_back(rng ? Tensor<double>::randn(shape, *rng) : Tensor<double>::zeros(shape));
  }
  return out;
}

std::vector<Tensor<double>> audio_snippets(const EncoderConfig& cfg, Rng* rng) {
  std::vector<Tensor<double>> out;
  for (int i = 0; i < cfg.snippets; ++i) {
    Shape shape{cfg.mfcc_rows, cfg.n_mfcc};
    out.push_back(rng ? Tensor<double>::randn(shape, *rng) : Tensor<double>::zeros(shape));
  }
  return out;
}

}  // namespace

TEST_CASE("zero input with zero biases gives zero features") {
  EncoderConfig cfg = small_cfg();
  Rng rng(1);
  ToyVisualEncoder<double> enc(cfg, rng);
  // biases start at zero; tanh(0) = 0 propagates the zero through both layers
  Tensor<double> f = enc.encode(visual_snippets(cfg, nullptr));
  for (Index i = 0; i < f.dim(0); ++i) {
    for (Index j = 0; j < f.dim(1); ++j) CHECK(f.at(i, j) == 0.0);
  }
}

TEST_CASE("output shape is snippets x channels for both modalities") {
  EncoderConfig cfg = small_cfg();
  Rng rng(2);
  ToyVisualEncoder<double> visual(cfg, rng);
  ToyAudioEncoder<double> audio(cfg, rng);

  Tensor<double> fv = visual.encode(visual_snippets(cfg, &rng));
  Tensor<double> fa = audio.encode(audio_snippets(cfg, &rng));
  CHECK(fv.shape() == Shape{4, 16});
  CHECK(fa.shape() == Shape{4, 16});
  CHECK(fv.all_finite());
  CHECK(fa.all_finite());
}

TEST_CASE("per-snippet independence: changing snippet j changes only row j") {
  EncoderConfig cfg = small_cfg();
  Rng rng(3);
  ToyAudioEncoder<double> enc(cfg, rng);
  auto snippets = audio_snippets(cfg, &rng);
  Tensor<double> base = enc.encode(snippets);

  auto modified = snippets;
  modified[2] = Tensor<double>::randn({cfg.mfcc_rows, cfg.n_mfcc}, rng);
  Tensor<double> changed = enc.encode(modified);

  for (Index i = 0; i < base.dim(0); ++i) {
    bool row_equal = true;
    for (Index j = 0; j < base.dim(1); ++j) {
      row_equal = row_equal && base.at(i, j) == changed.at(i, j);
    }
    CHECK(row_equal == (i != 2));
  }
}

TEST_CASE("swapping snippet order permutes rows identically") {
  EncoderConfig cfg = small_cfg();
  Rng rng(4);
  ToyVisualEncoder<double> enc(cfg, rng);
  auto snippets = visual_snippets(cfg, &rng);
  Tensor<double> base = enc.encode(snippets);

  std::swap(snippets[0], snippets[3]);
  Tensor<double> swapped = enc.encode(snippets);
  for (Index j = 0; j < base.dim(1); ++j) {
    CHECK(swapped.at(0, j) == base.at(3, j));
    CHECK(swapped.at(3, j) == base.at(0, j));
    CHECK(swapped.at(1, j) == base.at(1, j));
    CHECK(swapped.at(2, j) == base.at(2, j));
  }
}

TEST_CASE("shape mismatches are rejected") {
  EncoderConfig cfg = small_cfg();
  Rng rng(5);
  ToyVisualEncoder<double> enc(cfg, rng);

  auto snippets = visual_snippets(cfg, &rng);
  snippets.pop_back();
  CHECK_THROWS_AS(enc.encode(snippets), ShapeError);

  snippets = visual_snippets(cfg, &rng);
  snippets[1] = Tensor<double>::zeros({cfg.frames, cfg.height, cfg.width + 1, 3});
  CHECK_THROWS_AS(enc.encode(snippets), ShapeError);
}

TEST_CASE("identity encoder passes features through") {
  EncoderConfig cfg = small_cfg();
  IdentityEncoder<double> enc(cfg);
  Rng rng(6);

  std::vector<Tensor<double>> rows;
  for (int i = 0; i < cfg.snippets; ++i) rows.push_back(Tensor<double>::randn({16}, rng));
  Tensor<double> f = enc.encode(rows);
  CHECK(f.shape() == Shape{4, 16});
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 16; ++j) {
      CHECK(f.at(i, j) == rows[static_cast<std::size_t>(i)].at(j));
    }
  }

  Tensor<double> whole = Tensor<double>::randn({4, 16}, rng);
  CHECK(enc.forward(whole).values().data() == whole.values().data());
  CHECK_THROWS_AS(enc.forward(Tensor<double>::zeros({4, 8})), ShapeError);
  CHECK(enc.params().empty());
}

TEST_CASE("frame windows respect segments, order, and the seed") {
  Rng rng(11);
  const Index total = 37;
  const int s = 4, frames = 3;
  const auto starts = snippet_frame_starts(total, s, frames, rng);
  REQUIRE(starts.size() == 4);
  for (int i = 0; i < s; ++i) {
    const Index seg_begin = total * i / s, seg_end = total * (i + 1) / s;
    CHECK(starts[static_cast<std::size_t>(i)] >= seg_begin);
    CHECK(starts[static_cast<std::size_t>(i)] + frames <= seg_end);
    if (i > 0) CHECK(starts[static_cast<std::size_t>(i)] > starts[static_cast<std::size_t>(i - 1)]);
  }

  Rng rng_a(5), rng_b(5);
  CHECK(snippet_frame_starts(total, s, frames, rng_a) ==
        snippet_frame_starts(total, s, frames, rng_b));

  Rng rng_c(1);
  CHECK_THROWS_AS(snippet_frame_starts(7, 4, 3, rng_c), ContractError);  // segments too short

  // extraction slices the right frames
  Tensor<double> video = Tensor<double>::randn({10, 2, 2, 3}, rng);
  Tensor<double> clip = extract_frame_window(video, 4, 3);
  CHECK(clip.shape() == Shape{3, 2, 2, 3});
  CHECK(clip.at(0, 0, 0, 0) == video.at(4, 0, 0, 0));
  CHECK(clip.at(2, 1, 1, 2) == video.at(6, 1, 1, 2));
  CHECK_THROWS_AS(extract_frame_window(video, 8, 3), ContractError);
}

TEST_CASE("encoder parameters are differentiable leaves") {
  EncoderConfig cfg = small_cfg();
  Rng rng(7);
  ToyAudioEncoder<double> enc(cfg, rng);
  auto snippets = audio_snippets(cfg, &rng);

  Tensor<double> loss = sum(enc.encode(snippets));
  loss.backward();
  for (auto& [name, p] : enc.params()) {
    CHECK(p.has_grad());
  }
}
