// SPDX-License-Identifier: Apache-2.0
//
// Training loop with deferred updates: per-batch gradients accumulate
// (sample-weighted) across a window of `deferred_every` batches, then one
// SGD+momentum step applies the window-mean gradient. For equal batch sizes
// this is exactly "accumulated gradient divided by deferred_every"; a partial
// tail batch is kept and weighted by its size. Everything is driven by one
// seeded Rng, so a fixed seed and precision give bit-identical runs.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "avfusion/blob.hpp"
#include "avfusion/lgf.hpp"
#include "avfusion/loss.hpp"
#include "avfusion/metrics.hpp"
#include "avfusion/synthetic.hpp"

namespace avfusion {

struct TrainConfig {
  int batch_size = 8;
  int deferred_every = 4;
  int epochs = 100;
  double lr = 0.05;
  double momentum = 0.9;
  std::string precision = "f32";  // "f32" | "f64"
  std::uint64_t seed = 0;
  LossConfig loss;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (deferred_every < 1) throw ConfigError("train: deferred_every must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (lr <= 0) throw ConfigError("train: lr must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0, 1)");
    if (precision != "f32" && precision != "f64") {
      throw ConfigError("train: precision must be f32 or f64");
    }
    loss.validate();
  }
};

/// v <- mu*v + g, p <- p - lr*v over a fixed parameter list.
template <typename S>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, const NamedParamList<S>& params)
      : lr_(lr), momentum_(momentum) {
    for (const auto& [name, p] : params) {
      velocity_.emplace_back(static_cast<std::size_t>(p.size()), S(0));
    }
  }

  /// Applies one step using each parameter's accumulated gradient scaled by
  /// `grad_scale` (1 / samples-in-window for deferred updates).
  void step(NamedParamList<S>& params, double grad_scale) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].second;
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto v = velocity_[i].data();
      auto vals = p.values_mut();
      for (Index j = 0; j < p.size(); ++j) {
        v[j] = static_cast<S>(momentum_) * v[j] +
               g[static_cast<std::size_t>(j)] * static_cast<S>(grad_scale);
        vals[static_cast<std::size_t>(j)] -= static_cast<S>(lr_) * v[j];
      }
    }
  }

  std::vector<std::vector<S>>& velocity() { return velocity_; }

 private:
  double lr_, momentum_;
  std::vector<std::vector<S>> velocity_;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_acc = 0.0;
};

template <typename S>
struct TrainedModel {
  LgfConfig model_cfg;
  TrainConfig train_cfg;
  LgfParams<S> params;
  std::vector<std::vector<S>> velocity;
  std::string rng_state;
  std::vector<EpochStats> history;
};

/// Batch loss: per-sample forwards, logits stacked per branch, EP-CE summed
/// over branches, mean over the batch.
template <typename S>
Tensor<S> batch_loss(const LgfConfig& cfg, const LgfParams<S>& params,
                     const std::vector<const SyntheticSample*>& batch, const LossConfig& loss_cfg,
                     const PolarityMap& pmap, LossStats* stats = nullptr) {
  std::vector<Tensor<S>> overall, visual, audio;
  std::vector<Index> labels;
  overall.reserve(batch.size());
  for (const auto* sample : batch) {
    LgfOutputs<S> out = lgf_forward(cfg, params, feature_tensor<S>(sample->audio),
                                    feature_tensor<S>(sample->visual));
    overall.push_back(out.logits);
    visual.push_back(out.branch_visual);
    audio.push_back(out.branch_audio);
    labels.push_back(sample->label);
  }
  return multi_task_loss(stack(overall), stack(visual), stack(audio), labels, loss_cfg, pmap,
                         stats);
}

template <typename S>
std::vector<std::int64_t> predict(const LgfConfig& cfg, const LgfParams<S>& params,
                                  const std::vector<SyntheticSample>& samples) {
  NoGradGuard ng;
  std::vector<std::int64_t> preds;
  preds.reserve(samples.size());
  for (const auto& sample : samples) {
    LgfOutputs<S> out = lgf_forward(cfg, params, feature_tensor<S>(sample.audio),
                                    feature_tensor<S>(sample.visual));
    auto logits = out.logits.values();
    Index best = 0;
    for (Index j = 1; j < out.logits.size(); ++j) {
      if (logits[static_cast<std::size_t>(j)] > logits[static_cast<std::size_t>(best)]) best = j;
    }
    preds.push_back(best);
  }
  return preds;
}

template <typename S>
MetricsReport evaluate(const LgfConfig& cfg, const LgfParams<S>& params,
                       const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) throw ContractError("evaluate: empty dataset");
  std::vector<std::int64_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return compute_metrics(predict(cfg, params, samples), labels, cfg.classes);
}

template <typename S>
TrainedModel<S> train(const LgfConfig& model_cfg, const TrainConfig& train_cfg,
                      const std::vector<SyntheticSample>& data, const PolarityMap& pmap) {
  model_cfg.validate();
  train_cfg.validate();
  if (data.empty()) throw ContractError("train: empty dataset");

  Rng rng(train_cfg.seed);
  TrainedModel<S> model{model_cfg, train_cfg, LgfParams<S>::init(model_cfg, rng), {}, "", {}};
  SgdMomentum<S> opt(train_cfg.lr, train_cfg.momentum, model.params.named());

  NamedParamList<S> params = model.params.named();
  auto zero_all = [&params] {
    for (auto& [name, p] : params) p.zero_grad();
  };
  zero_all();

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  int window_batches = 0;
  long window_samples = 0;
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    // Fisher-Yates from the run Rng; std::shuffle is implementation-defined.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }
    double loss_sum = 0.0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(train_cfg.batch_size)) {
      std::vector<const SyntheticSample*> batch;
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(train_cfg.batch_size));
      for (std::size_t i = at; i < end; ++i) batch.push_back(&data[order[i]]);

      Tensor<S> loss = batch_loss(model_cfg, model.params, batch, train_cfg.loss, pmap);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw NumericError("train: non-finite loss " + std::to_string(loss_value) + " at epoch " +
                           std::to_string(epoch) + ", batch offset " + std::to_string(at));
      }
      loss_sum += loss_value * static_cast<double>(batch.size());

      // accumulate sample-weighted gradients across the deferred window
      scale(loss, static_cast<double>(batch.size())).backward();
      ++window_batches;
      window_samples += static_cast<long>(batch.size());
      if (window_batches == train_cfg.deferred_every) {
        opt.step(params, 1.0 / static_cast<double>(window_samples));
        zero_all();
        window_batches = 0;
        window_samples = 0;
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(data.size());
    std::vector<std::int64_t> labels;
    for (const auto& s : data) labels.push_back(s.label);
    stats.train_acc = compute_metrics(predict(model_cfg, model.params, data), labels,
                                      model_cfg.classes)
                          .acc;
    model.history.push_back(stats);
  }
  if (window_batches > 0) {
    opt.step(params, 1.0 / static_cast<double>(window_samples));
    zero_all();
  }
  model.velocity = opt.velocity();
  model.rng_state = rng.state();
  return model;
}

// ---------------------------------------------------------------------------
// checkpointing

inline nlohmann::json lgf_config_json(const LgfConfig& c) {
  return {{"snippets", c.snippets},
          {"channels", c.channels},
          {"layers", c.layers},
          {"heads", c.heads},
          {"base_window", c.base_window},
          {"classes", c.classes},
          {"conv_kernel", c.conv_kernel},
          {"conv_dilations", c.conv_dilations},
          {"ffn_multiplier", c.ffn_multiplier},
          {"ln_eps", c.ln_eps},
          {"fusion", to_string(c.fusion)}};
}

inline LgfConfig lgf_config_from_json(const nlohmann::json& j) {
  LgfConfig c;
  c.snippets = j.value("snippets", c.snippets);
  c.channels = j.value("channels", c.channels);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.base_window = j.value("base_window", c.base_window);
  c.classes = j.value("classes", c.classes);
  c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
  c.conv_dilations = j.value("conv_dilations", c.conv_dilations);
  c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  c.fusion = fusion_from_string(j.value("fusion", std::string("mid_concat")));
  c.validate();
  return c;
}

inline nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"deferred_every", c.deferred_every},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"precision", c.precision},
          {"seed", c.seed},
          {"loss",
           {{"gamma_positive", c.loss.gamma_positive},
            {"gamma_neutral", c.loss.gamma_neutral},
            {"gamma_negative", c.loss.gamma_negative},
            {"weight_overall", c.loss.weight_overall},
            {"weight_visual", c.loss.weight_visual},
            {"weight_audio", c.loss.weight_audio},
            {"log_floor", c.loss.log_floor}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.deferred_every = j.value("deferred_every", c.deferred_every);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.precision = j.value("precision", c.precision);
  c.seed = j.value("seed", c.seed);
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    c.loss.gamma_positive = l.value("gamma_positive", c.loss.gamma_positive);
    c.loss.gamma_neutral = l.value("gamma_neutral", c.loss.gamma_neutral);
    c.loss.gamma_negative = l.value("gamma_negative", c.loss.gamma_negative);
    c.loss.weight_overall = l.value("weight_overall", c.loss.weight_overall);
    c.loss.weight_visual = l.value("weight_visual", c.loss.weight_visual);
    c.loss.weight_audio = l.value("weight_audio", c.loss.weight_audio);
    c.loss.log_floor = l.value("log_floor", c.loss.log_floor);
  }
  c.validate();
  return c;
}

template <typename S>
void save_checkpoint(const std::string& path, const TrainedModel<S>& model) {
  Blob blob;
  NamedParamList<S> params = model.params.named();
  for (const auto& [name, p] : params) blob.add("param/" + name, p);
  for (std::size_t i = 0; i < model.velocity.size(); ++i) {
    Tensor<S> v = Tensor<S>::from({static_cast<Index>(model.velocity[i].size())},
                                  std::vector<S>(model.velocity[i]));
    blob.add("momentum/" + params[i].first, v);
  }
  blob.meta["format"] = "checkpoint";
  blob.meta["precision"] = sizeof(S) == 4 ? "f32" : "f64";
  blob.meta["rng_state"] = model.rng_state;
  blob.meta["model"] = lgf_config_json(model.model_cfg);
  blob.meta["train"] = train_config_json(model.train_cfg);
  blob.save(path);
}

template <typename S>
TrainedModel<S> load_checkpoint_as(const Blob& blob) {
  const std::string want = sizeof(S) == 4 ? "f32" : "f64";
  if (blob.meta.value("precision", "") != want) {
    throw ConfigError("checkpoint: stored precision " +
                      blob.meta.value("precision", std::string("?")) + ", requested " + want);
  }
  TrainedModel<S> model;
  model.model_cfg = lgf_config_from_json(blob.meta.at("model"));
  model.train_cfg = train_config_from_json(blob.meta.at("train"));
  model.rng_state = blob.meta.value("rng_state", "");

  Rng scratch(0);
  model.params = LgfParams<S>::init(model.model_cfg, scratch);
  NamedParamList<S> params = model.params.named();
  for (auto& [name, p] : params) {
    Tensor<S> stored = blob.template tensor<S>("param/" + name);
    if (stored.shape() != p.shape()) {
      throw ConfigError("checkpoint: tensor '" + name + "' has shape " +
                        shape_str(stored.shape()) + ", expected " + shape_str(p.shape()));
    }
    std::copy(stored.values().begin(), stored.values().end(), p.values_mut().begin());
    model.velocity.emplace_back();
    Tensor<S> v = blob.template tensor<S>("momentum/" + name);
    model.velocity.back().assign(v.values().begin(), v.values().end());
  }
  return model;
}

}  // namespace avfusion
