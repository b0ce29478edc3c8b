// SPDX-License-Identifier: Apache-2.0
//
// Snippet encoders. Every encoder maps s per-snippet inputs to an [s, C1]
// feature matrix in temporal order; rows are computed independently per
// snippet. The toy encoders stand in for full-scale backbones at desk scale;
// the identity encoder passes precomputed features through for pure-fusion
// experiments.

#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "avfusion/ops.hpp"
#include "avfusion/tensor.hpp"

namespace avfusion {

struct EncoderConfig {
  int snippets = 4;
  int channels = 16;  // C1
  int hidden = 8;
  // visual snippet input: frames x height x width x 3
  int frames = 4;
  int height = 8;
  int width = 8;
  // audio snippet input: rows x n_mfcc
  int mfcc_rows = 16;
  int n_mfcc = 13;

  void validate() const {
    if (snippets < 1 || channels < 1 || hidden < 1 || frames < 1 || height < 1 || width < 1 ||
        mfcc_rows < 1 || n_mfcc < 1) {
      throw ConfigError("encoder: all dimensions must be positive");
    }
  }
};

template <typename S>
using NamedParams = std::vector<std::pair<std::string, Tensor<S>>>;

template <typename S>
class SnippetEncoder {
 public:
  virtual ~SnippetEncoder() = default;
  /// s per-snippet tensors -> [s, C1].
  virtual Tensor<S> encode(const std::vector<Tensor<S>>& snippets) const = 0;
  virtual NamedParams<S> params() const = 0;
};

namespace detail {

/// Mean over every axis but the last; the input carries no gradient, so this
/// stays outside the differentiation record.
template <typename S>
std::vector<S> channel_means(const Tensor<S>& t) {
  const Index ch = t.dim(t.rank() - 1);
  const Index groups = t.size() / ch;
  std::vector<S> mean(static_cast<std::size_t>(ch), S(0));
  auto vals = t.values();
  for (Index g = 0; g < groups; ++g) {
    for (Index c = 0; c < ch; ++c) mean[static_cast<std::size_t>(c)] += vals[g * ch + c];
  }
  for (auto& v : mean) v /= static_cast<S>(groups);
  return mean;
}

}  // namespace detail

/// Two-layer perceptron over per-snippet pooled inputs.
template <typename S>
class ToyEncoder : public SnippetEncoder<S> {
 public:
  ToyEncoder(std::string prefix, EncoderConfig cfg, Index in_dim, Rng& rng)
      : prefix_(std::move(prefix)), cfg_(cfg), in_dim_(in_dim) {
    cfg_.validate();
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden));
    w1_ = Tensor<S>::randn({in_dim, cfg_.hidden}, rng, s1).set_requires_grad();
    b1_ = Tensor<S>::zeros({cfg_.hidden}).set_requires_grad();
    w2_ = Tensor<S>::randn({cfg_.hidden, cfg_.channels}, rng, s2).set_requires_grad();
    b2_ = Tensor<S>::zeros({cfg_.channels}).set_requires_grad();
  }

  Tensor<S> encode(const std::vector<Tensor<S>>& snippets) const override {
    if (static_cast<int>(snippets.size()) != cfg_.snippets) {
      throw ShapeError(prefix_ + ": expected " + std::to_string(cfg_.snippets) +
                       " snippets, got " + std::to_string(snippets.size()));
    }
    std::vector<S> pooled;
    pooled.reserve(static_cast<std::size_t>(cfg_.snippets * in_dim_));
    for (const auto& snip : snippets) {
      check_input(snip);
      auto mean = detail::channel_means(snip);
      pooled.insert(pooled.end(), mean.begin(), mean.end());
    }
    Tensor<S> x = Tensor<S>::from({cfg_.snippets, in_dim_}, std::move(pooled));
    Tensor<S> h = tanh(add_bias(matmul(x, w1_), b1_));
    return add_bias(matmul(h, w2_), b2_);
  }

  NamedParams<S> params() const override {
    return {{prefix_ + "/w1", w1_},
            {prefix_ + "/b1", b1_},
            {prefix_ + "/w2", w2_},
            {prefix_ + "/b2", b2_}};
  }

 protected:
  virtual void check_input(const Tensor<S>& snip) const = 0;

  std::string prefix_;
  EncoderConfig cfg_;
  Index in_dim_;
  Tensor<S> w1_, b1_, w2_, b2_;
};

/// Visual branch stand-in: per snippet [T,H,W,3] -> spatial-temporal mean
/// pooling -> MLP -> C1 row.
template <typename S>
class ToyVisualEncoder final : public ToyEncoder<S> {
 public:
  ToyVisualEncoder(const EncoderConfig& cfg, Rng& rng)
      : ToyEncoder<S>("visual_encoder", cfg, 3, rng) {}

 private:
  void check_input(const Tensor<S>& snip) const override {
    const auto& cfg = this->cfg_;
    if (snip.rank() != 4 || snip.dim(0) != cfg.frames || snip.dim(1) != cfg.height ||
        snip.dim(2) != cfg.width || snip.dim(3) != 3) {
      throw ShapeError("visual_encoder: snippet " + shape_str(snip.shape()) + " != [" +
                       std::to_string(cfg.frames) + "x" + std::to_string(cfg.height) + "x" +
                       std::to_string(cfg.width) + "x3]");
    }
  }
};

/// Audio branch stand-in over MFCC chunks: per snippet [rows, n_mfcc] ->
/// time mean pooling -> MLP -> C1 row.
template <typename S>
class ToyAudioEncoder final : public ToyEncoder<S> {
 public:
  ToyAudioEncoder(const EncoderConfig& cfg, Rng& rng)
      : ToyEncoder<S>("audio_encoder", cfg, cfg.n_mfcc, rng) {}

 private:
  void check_input(const Tensor<S>& snip) const override {
    const auto& cfg = this->cfg_;
    if (snip.rank() != 2 || snip.dim(0) != cfg.mfcc_rows || snip.dim(1) != cfg.n_mfcc) {
      throw ShapeError("audio_encoder: snippet " + shape_str(snip.shape()) + " != [" +
                       std::to_string(cfg.mfcc_rows) + "x" + std::to_string(cfg.n_mfcc) + "]");
    }
  }
};

/// Frame-window plan for one video: divide [0, total_frames) into s segments
/// of equal duration and pick T successive frames from each at a seeded
/// random offset, keeping temporal order. Returns the s window start indices.
inline std::vector<Index> snippet_frame_starts(Index total_frames, int snippets, int frames,
                                               Rng& rng) {
  if (snippets < 1 || frames < 1) throw ConfigError("frame sampling: bad snippet/frame counts");
  std::vector<Index> starts;
  starts.reserve(static_cast<std::size_t>(snippets));
  for (int i = 0; i < snippets; ++i) {
    const Index seg_begin = total_frames * i / snippets;
    const Index seg_end = total_frames * (i + 1) / snippets;
    if (seg_end - seg_begin < frames) {
      throw ContractError("frame sampling: segment " + std::to_string(i) + " holds " +
                          std::to_string(seg_end - seg_begin) + " frames, needs " +
                          std::to_string(frames));
    }
    const Index slack = seg_end - seg_begin - frames;
    starts.push_back(seg_begin + static_cast<Index>(rng.below(
                                     static_cast<std::uint64_t>(slack + 1))));
  }
  return starts;
}

/// Copies `frames` successive frames starting at `start` out of a
/// [F, H, W, 3] video tensor.
template <typename S>
Tensor<S> extract_frame_window(const Tensor<S>& video, Index start, int frames) {
  if (video.rank() != 4 || video.dim(3) != 3) {
    throw ShapeError("extract_frame_window: video " + shape_str(video.shape()) +
                     " is not [F,H,W,3]");
  }
  if (start < 0 || start + frames > video.dim(0)) {
    throw ContractError("extract_frame_window: window [" + std::to_string(start) + ", " +
                        std::to_string(start + frames) + ") outside " +
                        std::to_string(video.dim(0)) + " frames");
  }
  const Index stride = video.dim(1) * video.dim(2) * 3;
  auto vals = video.values();
  std::vector<S> out(vals.begin() + start * stride, vals.begin() + (start + frames) * stride);
  return Tensor<S>::from({frames, video.dim(1), video.dim(2), 3}, std::move(out));
}

/// Passes precomputed per-snippet feature vectors straight through.
template <typename S>
class IdentityEncoder final : public SnippetEncoder<S> {
 public:
  explicit IdentityEncoder(EncoderConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  Tensor<S> encode(const std::vector<Tensor<S>>& snippets) const override {
    if (static_cast<int>(snippets.size()) != cfg_.snippets) {
      throw ShapeError("identity_encoder: expected " + std::to_string(cfg_.snippets) +
                       " snippets, got " + std::to_string(snippets.size()));
    }
    for (const auto& snip : snippets) {
      if (snip.rank() != 1 || snip.dim(0) != cfg_.channels) {
        throw ShapeError("identity_encoder: snippet " + shape_str(snip.shape()) + " != [" +
                         std::to_string(cfg_.channels) + "]");
      }
    }
    return stack(snippets);
  }

  /// Whole-matrix convenience for feature files: validates and passes through.
  Tensor<S> forward(const Tensor<S>& features) const {
    if (features.rank() != 2 || features.dim(0) != cfg_.snippets ||
        features.dim(1) != cfg_.channels) {
      throw ShapeError("identity_encoder: features " + shape_str(features.shape()) + " != [" +
                       std::to_string(cfg_.snippets) + "x" + std::to_string(cfg_.channels) + "]");
    }
    return features;
  }

  NamedParams<S> params() const override { return {}; }

 private:
  EncoderConfig cfg_;
};

}  // namespace avfusion
