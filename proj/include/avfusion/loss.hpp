// SPDX-License-Identifier: Apache-2.0
//
// Polarity-weighted cross-entropy: per sample, the negative log-likelihood is
// scaled by (1 + gamma) when the predicted class's polarity differs from the
// true class's. The penalty factor is a constant weight; no gradient flows
// through the argmax.

#pragma once

#include <string>
#include <vector>

#include "avfusion/ops.hpp"
#include "avfusion/tensor.hpp"

namespace avfusion {

enum class Polarity { kNegative, kNeutral, kPositive };

/// Total mapping from class index to polarity.
class PolarityMap {
 public:
  explicit PolarityMap(std::vector<Polarity> by_class) : by_class_(std::move(by_class)) {
    if (by_class_.empty()) throw ConfigError("polarity map: empty category set");
  }

  /// The six-emotion default, class order Excitation, Fear, Neutral,
  /// Relaxation, Sadness, Tension: Fear/Sadness/Tension negative, Neutral
  /// neutral, Excitation/Relaxation positive.
  static PolarityMap six_emotions() {
    return PolarityMap({Polarity::kPositive, Polarity::kNegative, Polarity::kNeutral,
                        Polarity::kPositive, Polarity::kNegative, Polarity::kNegative});
  }

  int classes() const { return static_cast<int>(by_class_.size()); }

  Polarity of(Index cls) const {
    if (cls < 0 || cls >= static_cast<Index>(by_class_.size())) {
      throw ContractError("polarity map: class " + std::to_string(cls) + " outside [0, " +
                          std::to_string(by_class_.size()) + ")");
    }
    return by_class_[static_cast<std::size_t>(cls)];
  }

 private:
  std::vector<Polarity> by_class_;
};

struct LossConfig {
  double gamma_positive = 0.7;
  double gamma_neutral = 0.7;
  double gamma_negative = 0.7;
  // overall / visual / audio branch weights for the multi-task accumulation
  double weight_overall = 1.0;
  double weight_visual = 1.0;
  double weight_audio = 1.0;
  double log_floor = 1e-12;

  double gamma(Polarity p) const {
    switch (p) {
      case Polarity::kPositive: return gamma_positive;
      case Polarity::kNeutral: return gamma_neutral;
      case Polarity::kNegative: return gamma_negative;
    }
    return 0.0;
  }

  void validate() const {
    if (gamma_positive < 0 || gamma_neutral < 0 || gamma_negative < 0) {
      throw ConfigError("loss: gamma must be >= 0");
    }
  }
};

/// Counters surfaced with a loss value (clamped log arguments etc.).
struct LossStats {
  long clamped = 0;
};

/// Prediction per row: argmax with lowest-index tie-break.
template <typename S>
std::vector<Index> argmax_rows(const Tensor<S>& m) {
  if (m.rank() != 2) throw ContractError("argmax_rows: need rank-2, got " + shape_str(m.shape()));
  std::vector<Index> out(static_cast<std::size_t>(m.dim(0)));
  auto mm = m.mat();
  for (Index i = 0; i < m.dim(0); ++i) {
    Index best = 0;
    for (Index j = 1; j < m.dim(1); ++j) {
      if (mm(i, j) > mm(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

/// Polarity-enhanced cross-entropy over probability rows.
/// probs rows must sum to 1 (come out of a softmax).
template <typename S>
Tensor<S> ep_ce_loss(const Tensor<S>& probs, const std::vector<Index>& labels,
                     const LossConfig& cfg, const PolarityMap& pmap,
                     LossStats* stats = nullptr) {
  cfg.validate();
  if (probs.rank() != 2) {
    throw ContractError("ep_ce_loss: probs must be rank-2, got " + shape_str(probs.shape()));
  }
  const Index n = probs.dim(0), c = probs.dim(1);
  if (c != pmap.classes()) {
    throw ConfigError("ep_ce_loss: probs have " + std::to_string(c) +
                      " classes, polarity map covers " + std::to_string(pmap.classes()));
  }
  if (static_cast<Index>(labels.size()) != n) {
    throw ContractError("ep_ce_loss: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " rows");
  }
  auto pm = probs.mat();
  for (Index i = 0; i < n; ++i) {
    const double rowsum = static_cast<double>(pm.row(i).sum());
    if (std::abs(rowsum - 1.0) > 1e-4) {
      throw ContractError("ep_ce_loss: probs row " + std::to_string(i) + " sums to " +
                          std::to_string(rowsum) + ", expected 1");
    }
  }
  const std::vector<Index> preds = argmax_rows(probs);
  std::vector<double> weights(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index y = labels[static_cast<std::size_t>(i)];
    const bool mismatch = pmap.of(y) != pmap.of(preds[static_cast<std::size_t>(i)]);
    weights[static_cast<std::size_t>(i)] = 1.0 + (mismatch ? cfg.gamma(pmap.of(y)) : 0.0);
  }
  long clamped = 0;
  Tensor<S> loss = nll_weighted(probs, labels, weights, cfg.log_floor, &clamped);
  if (stats) stats->clamped += clamped;
  return loss;
}

/// Weighted accumulation of the overall, visual, and audio branch losses;
/// softmax applied per branch.
template <typename S>
Tensor<S> multi_task_loss(const Tensor<S>& overall_logits, const Tensor<S>& visual_logits,
                          const Tensor<S>& audio_logits, const std::vector<Index>& labels,
                          const LossConfig& cfg, const PolarityMap& pmap,
                          LossStats* stats = nullptr) {
  if (overall_logits.shape() != visual_logits.shape() ||
      overall_logits.shape() != audio_logits.shape()) {
    throw ShapeError("multi_task_loss: branch logit shapes differ: " +
                     shape_str(overall_logits.shape()) + ", " +
                     shape_str(visual_logits.shape()) + ", " + shape_str(audio_logits.shape()));
  }
  Tensor<S> total =
      scale(ep_ce_loss(softmax(overall_logits), labels, cfg, pmap, stats), cfg.weight_overall);
  total = add(total,
              scale(ep_ce_loss(softmax(visual_logits), labels, cfg, pmap, stats), cfg.weight_visual));
  total = add(total,
              scale(ep_ce_loss(softmax(audio_logits), labels, cfg, pmap, stats), cfg.weight_audio));
  return total;
}

}  // namespace avfusion
