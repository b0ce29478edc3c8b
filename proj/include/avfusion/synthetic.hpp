// SPDX-License-Identifier: Apache-2.0
//
// Synthetic cross-modal classification task. Two independent latents drive
// the label (label = z_audio + 3 * z_visual with z_audio in {0,1,2} and
// z_visual in {0,1}); each modality's features are that latent's prototype
// plus per-snippet Gaussian noise. By construction the audio features alone
// narrow the label to 2 candidates and the visual features alone to 3, so
// only the fused pair identifies all six classes.

#pragma once

#include <vector>

#include "avfusion/rng.hpp"
#include "avfusion/tensor.hpp"

namespace avfusion {

struct SyntheticConfig {
  int snippets = 4;
  int channels = 16;
  int classes = 6;  // fixed by the z_a/z_v latent design
  double noise_sigma = 0.3;
  double prototype_scale = 1.0;
  int train_samples = 64;
  int test_samples = 256;
  std::uint64_t seed = 0;
  bool balanced_labels = true;  // cycle labels 0..5 instead of drawing them

  void validate() const {
    if (snippets < 1 || channels < 1) throw ConfigError("synthetic: bad dimensions");
    if (classes != 6) throw ConfigError("synthetic: the latent design fixes classes = 6");
    if (noise_sigma < 0) throw ConfigError("synthetic: noise_sigma must be >= 0");
    if (train_samples < 1 || test_samples < 1) throw ConfigError("synthetic: bad sample counts");
  }
};

struct SyntheticSample {
  RowMat<double> audio, visual;  // [s, C1]
  int label = 0;
};

struct SyntheticDataset {
  SyntheticConfig cfg;
  std::vector<RowMat<double>> audio_prototypes;   // 3 x [s, C1], indexed by z_a
  std::vector<RowMat<double>> visual_prototypes;  // 2 x [s, C1], indexed by z_v
  std::vector<SyntheticSample> train, test;
};

inline int audio_latent(int label) { return label % 3; }
inline int visual_latent(int label) { return label / 3; }

inline SyntheticDataset gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SyntheticDataset data;
  data.cfg = cfg;

  auto make_proto = [&]() {
    RowMat<double> p(cfg.snippets, cfg.channels);
    for (Index i = 0; i < p.rows(); ++i) {
      for (Index j = 0; j < p.cols(); ++j) p(i, j) = rng.normal() * cfg.prototype_scale;
    }
    return p;
  };
  for (int z = 0; z < 3; ++z) data.audio_prototypes.push_back(make_proto());
  for (int z = 0; z < 2; ++z) data.visual_prototypes.push_back(make_proto());

  auto draw_split = [&](int count) {
    std::vector<SyntheticSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      SyntheticSample s;
      s.label = cfg.balanced_labels ? i % cfg.classes
                                    : static_cast<int>(rng.below(
                                          static_cast<std::uint64_t>(cfg.classes)));
      s.audio = data.audio_prototypes[static_cast<std::size_t>(audio_latent(s.label))];
      s.visual = data.visual_prototypes[static_cast<std::size_t>(visual_latent(s.label))];
      for (Index r = 0; r < s.audio.rows(); ++r) {
        for (Index c = 0; c < s.audio.cols(); ++c) {
          s.audio(r, c) += cfg.noise_sigma * rng.normal();
          s.visual(r, c) += cfg.noise_sigma * rng.normal();
        }
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  data.train = draw_split(cfg.train_samples);
  data.test = draw_split(cfg.test_samples);
  return data;
}

/// Feature matrix of one sample as a (non-differentiable) tensor leaf.
template <typename S>
Tensor<S> feature_tensor(const RowMat<double>& m) {
  std::vector<S> v(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      v[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<S>(m(i, j));
    }
  }
  return Tensor<S>::from({m.rows(), m.cols()}, std::move(v));
}

}  // namespace avfusion
