// SPDX-License-Identifier: Apache-2.0
//
// Local-global fusion over paired audio/visual snippet features.
//
// Local stage: a serial pyramid of windowed self-attention and cross-modal
// attention blocks with gated merging and acausal dilated residual blocks;
// each pyramid layer's output is retained as one granularity level. The
// cross-modal block's parameters are one shared set used in both modality
// directions. A selective integration layer then weights the granularity
// levels per snippet via a single-head, dimension-1 cross-attention over the
// per-layer gate scores. Global stage: unmasked multi-head cross-modal
// attention, a projected residual, mean pooling over snippets, and a
// configurable fusion head over the two pooled embeddings.

#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "avfusion/ops.hpp"
#include "avfusion/rng.hpp"
#include "avfusion/tensor.hpp"

namespace avfusion {

enum class FusionStrategy { kMidConcat, kSum, kEwMultiply, kGated, kNeural };

inline const char* to_string(FusionStrategy f) {
  switch (f) {
    case FusionStrategy::kMidConcat: return "mid_concat";
    case FusionStrategy::kSum: return "sum";
    case FusionStrategy::kEwMultiply: return "ew_multiply";
    case FusionStrategy::kGated: return "gated";
    case FusionStrategy::kNeural: return "neural";
  }
  return "?";
}

inline FusionStrategy fusion_from_string(const std::string& s) {
  if (s == "mid_concat") return FusionStrategy::kMidConcat;
  if (s == "sum") return FusionStrategy::kSum;
  if (s == "ew_multiply") return FusionStrategy::kEwMultiply;
  if (s == "gated") return FusionStrategy::kGated;
  if (s == "neural") return FusionStrategy::kNeural;
  throw ConfigError("unknown fusion strategy '" + s + "'");
}

struct LgfConfig {
  int snippets = 4;     // s
  int channels = 16;    // C1
  int layers = 2;       // pyramid depth L
  int heads = 2;        // attention heads n
  int base_window = 1;  // d0; layer l uses half-size d0 * 2^(l-1)
  int classes = 6;
  int conv_kernel = 3;
  std::vector<int> conv_dilations = {1, 2};
  int ffn_multiplier = 2;
  double ln_eps = 1e-5;
  FusionStrategy fusion = FusionStrategy::kMidConcat;

  int head_dim() const { return channels / heads; }
  int window_half(int layer) const { return base_window << (layer - 1); }

  void validate() const {
    if (snippets < 1 || channels < 1 || layers < 1 || heads < 1 || classes < 1 ||
        conv_kernel < 1 || ffn_multiplier < 1) {
      throw ConfigError("lgf: all dimensions must be positive");
    }
    if (base_window < 0) throw ConfigError("lgf: base_window must be >= 0");
    if (channels % heads != 0) {
      throw ConfigError("lgf: channels (" + std::to_string(channels) +
                        ") not divisible by heads (" + std::to_string(heads) + ")");
    }
    if (conv_dilations.empty()) throw ConfigError("lgf: need at least one conv dilation");
    for (int d : conv_dilations) {
      if (d < 1) throw ConfigError("lgf: conv dilations must be >= 1");
    }
  }
};

/// Boolean window of half-size d around 1-based snippet index t, clamped to
/// [1, s]; no wraparound.
inline BoolVec window_mask(Index s, Index t, Index d) {
  if (t < 1 || t > s) {
    throw ContractError("window_mask: t=" + std::to_string(t) + " outside [1, " +
                        std::to_string(s) + "]");
  }
  if (d < 0) throw ContractError("window_mask: negative half-size");
  BoolVec m = BoolVec::Constant(s, false);
  const Index lo = std::max<Index>(1, t - d);
  const Index hi = std::min<Index>(s, t + d);
  for (Index j = lo; j <= hi; ++j) m[j - 1] = true;
  return m;
}

/// Row t holds window_mask(s, t+1, d): the key window of query snippet t.
inline BoolMat window_mask_matrix(Index s, Index d) {
  BoolMat m(s, s);
  for (Index t = 1; t <= s; ++t) m.row(t - 1) = window_mask(s, t, d).transpose();
  return m;
}

template <typename S>
using NamedParamList = std::vector<std::pair<std::string, Tensor<S>>>;

/// Attention weights captured during a forward pass, for inspection in tests.
template <typename S>
struct ForwardTrace {
  struct Block {
    std::string name;
    std::vector<RowMat<S>> head_attn;  // one [s_q, s_k] matrix per head
  };
  std::vector<Block> blocks;
};

// ---------------------------------------------------------------------------
// parameters

/// One attention block: per-head projection triplets, output projection, and
/// the feed-forward + norm stack that completes the block.
template <typename S>
struct AttnBlockParams {
  std::vector<Tensor<S>> wq, wk, wv;  // per head [C1, dk]
  Tensor<S> wo;                       // [C1, C1]
  Tensor<S> ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;

  static AttnBlockParams init(const LgfConfig& cfg, Rng& rng) {
    AttnBlockParams p;
    const Index c = cfg.channels, dk = cfg.head_dim(), hid = cfg.ffn_multiplier * cfg.channels;
    const double sc = 1.0 / std::sqrt(static_cast<double>(c));
    for (int h = 0; h < cfg.heads; ++h) {
      p.wq.push_back(Tensor<S>::randn({c, dk}, rng, sc).set_requires_grad());
      p.wk.push_back(Tensor<S>::randn({c, dk}, rng, sc).set_requires_grad());
      p.wv.push_back(Tensor<S>::randn({c, dk}, rng, sc).set_requires_grad());
    }
    p.wo = Tensor<S>::randn({c, c}, rng, sc).set_requires_grad();
    p.ff_w1 = Tensor<S>::randn({c, hid}, rng, sc).set_requires_grad();
    p.ff_b1 = Tensor<S>::zeros({hid}).set_requires_grad();
    p.ff_w2 = Tensor<S>::randn({hid, c}, rng, 1.0 / std::sqrt(static_cast<double>(hid)))
                  .set_requires_grad();
    p.ff_b2 = Tensor<S>::zeros({c}).set_requires_grad();
    p.ln1_g = Tensor<S>::full({c}, S(1)).set_requires_grad();
    p.ln1_b = Tensor<S>::zeros({c}).set_requires_grad();
    p.ln2_g = Tensor<S>::full({c}, S(1)).set_requires_grad();
    p.ln2_b = Tensor<S>::zeros({c}).set_requires_grad();
    return p;
  }

  void collect(const std::string& prefix, NamedParamList<S>& out) const {
    for (std::size_t h = 0; h < wq.size(); ++h) {
      const std::string hs = std::to_string(h);
      out.emplace_back(prefix + "/wq" + hs, wq[h]);
      out.emplace_back(prefix + "/wk" + hs, wk[h]);
      out.emplace_back(prefix + "/wv" + hs, wv[h]);
    }
    out.emplace_back(prefix + "/wo", wo);
    out.emplace_back(prefix + "/ff_w1", ff_w1);
    out.emplace_back(prefix + "/ff_b1", ff_b1);
    out.emplace_back(prefix + "/ff_w2", ff_w2);
    out.emplace_back(prefix + "/ff_b2", ff_b2);
    out.emplace_back(prefix + "/ln1_g", ln1_g);
    out.emplace_back(prefix + "/ln1_b", ln1_b);
    out.emplace_back(prefix + "/ln2_g", ln2_g);
    out.emplace_back(prefix + "/ln2_b", ln2_b);
  }
};

template <typename S>
struct GateParams {
  Tensor<S> ws, bs, wc, bc;  // [2C1, C1], [C1] each

  static GateParams init(const LgfConfig& cfg, Rng& rng) {
    GateParams p;
    const Index c = cfg.channels;
    const double sc = 1.0 / std::sqrt(static_cast<double>(2 * c));
    p.ws = Tensor<S>::randn({2 * c, c}, rng, sc).set_requires_grad();
    p.bs = Tensor<S>::zeros({c}).set_requires_grad();
    p.wc = Tensor<S>::randn({2 * c, c}, rng, sc).set_requires_grad();
    p.bc = Tensor<S>::zeros({c}).set_requires_grad();
    return p;
  }

  void collect(const std::string& prefix, NamedParamList<S>& out) const {
    out.emplace_back(prefix + "/ws", ws);
    out.emplace_back(prefix + "/bs", bs);
    out.emplace_back(prefix + "/wc", wc);
    out.emplace_back(prefix + "/bc", bc);
  }
};

template <typename S>
struct PyramidLayerParams {
  AttnBlockParams<S> sa_audio, sa_visual;
  AttnBlockParams<S> cma;  // one shared set, used in both modality directions
  GateParams<S> gate_audio, gate_visual;
  std::vector<Tensor<S>> conv_audio, conv_visual;  // per dilation, [C1, kw]
};

template <typename S>
struct GlcfParams {
  std::vector<Tensor<S>> wq, wk, wv;  // per head, shared across directions
  Tensor<S> w2;                       // [C1, C1]
  Tensor<S> proj_w_audio, proj_b_audio, proj_w_visual, proj_b_visual;
};

template <typename S>
struct LgfParams {
  std::vector<PyramidLayerParams<S>> layers;
  Tensor<S> scai_w;                      // [L, C1], row per granularity level
  Tensor<S> scai_b;                      // [L]
  Tensor<S> scai_wq, scai_wk, scai_wv;   // scalars (dim-1 single-head CMA)
  GlcfParams<S> glcf;
  Tensor<S> head_w, head_b;              // fusion head, shape per strategy
  Tensor<S> fuse_gate_w, fuse_gate_b;    // gated strategy only
  Tensor<S> fuse_hidden_w, fuse_hidden_b;  // neural strategy only
  Tensor<S> branch_w_audio, branch_b_audio, branch_w_visual, branch_b_visual;

  static LgfParams init(const LgfConfig& cfg, Rng& rng) {
    cfg.validate();
    LgfParams p;
    const Index c = cfg.channels, cls = cfg.classes, kw = cfg.conv_kernel;
    for (int l = 0; l < cfg.layers; ++l) {
      PyramidLayerParams<S> layer;
      layer.sa_audio = AttnBlockParams<S>::init(cfg, rng);
      layer.sa_visual = AttnBlockParams<S>::init(cfg, rng);
      layer.cma = AttnBlockParams<S>::init(cfg, rng);
      layer.gate_audio = GateParams<S>::init(cfg, rng);
      layer.gate_visual = GateParams<S>::init(cfg, rng);
      for (std::size_t i = 0; i < cfg.conv_dilations.size(); ++i) {
        layer.conv_audio.push_back(Tensor<S>::randn({c, kw}, rng, 0.1).set_requires_grad());
        layer.conv_visual.push_back(Tensor<S>::randn({c, kw}, rng, 0.1).set_requires_grad());
      }
      p.layers.push_back(std::move(layer));
    }

    const double sc = 1.0 / std::sqrt(static_cast<double>(c));
    p.scai_w = Tensor<S>::randn({cfg.layers, c}, rng, sc).set_requires_grad();
    p.scai_b = Tensor<S>::zeros({cfg.layers}).set_requires_grad();
    p.scai_wq = Tensor<S>::full({1}, S(1)).set_requires_grad();
    p.scai_wk = Tensor<S>::full({1}, S(1)).set_requires_grad();
    p.scai_wv = Tensor<S>::full({1}, S(1)).set_requires_grad();

    const Index dk = cfg.head_dim();
    for (int h = 0; h < cfg.heads; ++h) {
      p.glcf.wq.push_back(Tensor<S>::randn({c, dk}, rng, sc).set_requires_grad());
      p.glcf.wk.push_back(Tensor<S>::randn({c, dk}, rng, sc).set_requires_grad());
      p.glcf.wv.push_back(Tensor<S>::randn({c, dk}, rng, sc).set_requires_grad());
    }
    p.glcf.w2 = Tensor<S>::randn({c, c}, rng, sc).set_requires_grad();
    p.glcf.proj_w_audio = Tensor<S>::randn({c, c}, rng, sc).set_requires_grad();
    p.glcf.proj_b_audio = Tensor<S>::zeros({c}).set_requires_grad();
    p.glcf.proj_w_visual = Tensor<S>::randn({c, c}, rng, sc).set_requires_grad();
    p.glcf.proj_b_visual = Tensor<S>::zeros({c}).set_requires_grad();

    const double sc2 = 1.0 / std::sqrt(static_cast<double>(2 * c));
    switch (cfg.fusion) {
      case FusionStrategy::kMidConcat:
        p.head_w = Tensor<S>::randn({cls, 2 * c}, rng, sc2).set_requires_grad();
        break;
      case FusionStrategy::kSum:
      case FusionStrategy::kEwMultiply:
        p.head_w = Tensor<S>::randn({cls, c}, rng, sc).set_requires_grad();
        break;
      case FusionStrategy::kGated:
        p.fuse_gate_w = Tensor<S>::randn({c, 2 * c}, rng, sc2).set_requires_grad();
        p.fuse_gate_b = Tensor<S>::zeros({c}).set_requires_grad();
        p.head_w = Tensor<S>::randn({cls, c}, rng, sc).set_requires_grad();
        break;
      case FusionStrategy::kNeural:
        p.fuse_hidden_w = Tensor<S>::randn({c, 2 * c}, rng, sc2).set_requires_grad();
        p.fuse_hidden_b = Tensor<S>::zeros({c}).set_requires_grad();
        p.head_w = Tensor<S>::randn({cls, c}, rng, sc).set_requires_grad();
        break;
    }
    p.head_b = Tensor<S>::zeros({cls}).set_requires_grad();
    p.branch_w_audio = Tensor<S>::randn({cls, c}, rng, sc).set_requires_grad();
    p.branch_b_audio = Tensor<S>::zeros({cls}).set_requires_grad();
    p.branch_w_visual = Tensor<S>::randn({cls, c}, rng, sc).set_requires_grad();
    p.branch_b_visual = Tensor<S>::zeros({cls}).set_requires_grad();
    return p;
  }

  /// Deterministic manifest order; drives the optimizer, checkpoints, and the
  /// gradient check.
  NamedParamList<S> named() const {
    NamedParamList<S> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string lp = "layer" + std::to_string(l);
      layers[l].sa_audio.collect(lp + "/sa_audio", out);
      layers[l].sa_visual.collect(lp + "/sa_visual", out);
      layers[l].cma.collect(lp + "/cma", out);
      layers[l].gate_audio.collect(lp + "/gate_audio", out);
      layers[l].gate_visual.collect(lp + "/gate_visual", out);
      for (std::size_t i = 0; i < layers[l].conv_audio.size(); ++i) {
        out.emplace_back(lp + "/conv_audio/k" + std::to_string(i), layers[l].conv_audio[i]);
        out.emplace_back(lp + "/conv_visual/k" + std::to_string(i), layers[l].conv_visual[i]);
      }
    }
    out.emplace_back("scai/w", scai_w);
    out.emplace_back("scai/b", scai_b);
    out.emplace_back("scai/wq", scai_wq);
    out.emplace_back("scai/wk", scai_wk);
    out.emplace_back("scai/wv", scai_wv);
    for (std::size_t h = 0; h < glcf.wq.size(); ++h) {
      const std::string hs = std::to_string(h);
      out.emplace_back("glcf/wq" + hs, glcf.wq[h]);
      out.emplace_back("glcf/wk" + hs, glcf.wk[h]);
      out.emplace_back("glcf/wv" + hs, glcf.wv[h]);
    }
    out.emplace_back("glcf/w2", glcf.w2);
    out.emplace_back("glcf/proj_w_audio", glcf.proj_w_audio);
    out.emplace_back("glcf/proj_b_audio", glcf.proj_b_audio);
    out.emplace_back("glcf/proj_w_visual", glcf.proj_w_visual);
    out.emplace_back("glcf/proj_b_visual", glcf.proj_b_visual);
    out.emplace_back("head/w", head_w);
    out.emplace_back("head/b", head_b);
    if (fuse_gate_w.valid()) {
      out.emplace_back("head/gate_w", fuse_gate_w);
      out.emplace_back("head/gate_b", fuse_gate_b);
    }
    if (fuse_hidden_w.valid()) {
      out.emplace_back("head/hidden_w", fuse_hidden_w);
      out.emplace_back("head/hidden_b", fuse_hidden_b);
    }
    out.emplace_back("branch_audio/w", branch_w_audio);
    out.emplace_back("branch_audio/b", branch_b_audio);
    out.emplace_back("branch_visual/w", branch_w_visual);
    out.emplace_back("branch_visual/b", branch_b_visual);
    return out;
  }
};

// ---------------------------------------------------------------------------
// building blocks

namespace detail {

template <typename S>
Tensor<S> ln_affine(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                    double eps) {
  return add_bias(mul_rows(layer_norm(x, eps), gain), bias);
}

}  // namespace detail

/// Windowed attention block. Queries come from `query_in`; keys/values from
/// `kv_in` (same tensor for self-attention, the other modality for
/// cross-modal attention). Completed by feed-forward, layer norm, and
/// residual connections.
template <typename S>
Tensor<S> attention_block(const LgfConfig& cfg, const AttnBlockParams<S>& p,
                          const Tensor<S>& query_in, const Tensor<S>& kv_in, const BoolMat& mask,
                          typename ForwardTrace<S>::Block* trace = nullptr) {
  if (query_in.rank() != 2 || kv_in.rank() != 2 || query_in.dim(1) != cfg.channels ||
      kv_in.dim(1) != cfg.channels) {
    throw ShapeError("attention_block: inputs " + shape_str(query_in.shape()) + ", " +
                     shape_str(kv_in.shape()) + " do not match channels=" +
                     std::to_string(cfg.channels));
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  std::vector<Tensor<S>> head_outs;
  head_outs.reserve(p.wq.size());
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    Tensor<S> q = matmul(query_in, p.wq[h]);
    Tensor<S> k = matmul(kv_in, p.wk[h]);
    Tensor<S> v = matmul(kv_in, p.wv[h]);
    Tensor<S> att = masked_softmax(scale(matmul(q, transpose(k)), inv_sqrt_dk), mask);
    if (trace) trace->head_attn.push_back(RowMat<S>(att.mat()));
    head_outs.push_back(matmul(att, v));
  }
  Tensor<S> proj = matmul(concat(head_outs, 1), p.wo);
  Tensor<S> h1 = detail::ln_affine(add(query_in, proj), p.ln1_g, p.ln1_b, cfg.ln_eps);
  Tensor<S> ff = add_bias(
      matmul(tanh(add_bias(matmul(h1, p.ff_w1), p.ff_b1)), p.ff_w2), p.ff_b2);
  return detail::ln_affine(add(h1, ff), p.ln2_g, p.ln2_b, cfg.ln_eps);
}

/// Channel-wise gated merge of the parallel self- and cross-attention
/// outputs: sigmoid gates from the concatenation, then weighted summation.
template <typename S>
Tensor<S> gated_merge(const GateParams<S>& p, const Tensor<S>& f_self, const Tensor<S>& f_cross) {
  if (f_self.shape() != f_cross.shape()) {
    throw ShapeError("gated_merge: shapes " + shape_str(f_self.shape()) + " vs " +
                     shape_str(f_cross.shape()));
  }
  Tensor<S> cat = concat<S>({f_self, f_cross}, 1);
  Tensor<S> gs = sigmoid(add_bias(matmul(cat, p.ws), p.bs));
  Tensor<S> gc = sigmoid(add_bias(matmul(cat, p.wc), p.bc));
  return add(mul(gs, f_self), mul(gc, f_cross));
}

/// Stack of acausal dilated residual blocks: x <- x + conv(x) per block.
template <typename S>
Tensor<S> dilated_residual(const LgfConfig& cfg, const std::vector<Tensor<S>>& kernels,
                           const Tensor<S>& x) {
  Tensor<S> out = x;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    out = add(out, dilated_conv1d_per_channel(out, kernels[i], cfg.conv_dilations[i]));
  }
  return out;
}

/// Selective integration of pyramid levels. Per-layer gate scores (sigmoid of
/// a C1->1 projection per granularity) are cross-weighted through a
/// single-head, dimension-1 attention whose keys/values come from the other
/// modality, then used for the weighted summation over pyramid levels.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> scai_integrate(const LgfConfig& cfg, const LgfParams<S>& p,
                                               const std::vector<Tensor<S>>& pyramid_audio,
                                               const std::vector<Tensor<S>>& pyramid_visual) {
  const auto levels = static_cast<Index>(pyramid_audio.size());
  if (levels == 0 || pyramid_visual.size() != pyramid_audio.size()) {
    throw ShapeError("scai_integrate: pyramid depth mismatch (" +
                     std::to_string(pyramid_audio.size()) + " vs " +
                     std::to_string(pyramid_visual.size()) + ")");
  }
  const Index s = cfg.snippets;

  auto gate_scores = [&](const std::vector<Tensor<S>>& pyramid) {
    std::vector<Tensor<S>> cols;
    cols.reserve(static_cast<std::size_t>(levels));
    for (Index l = 0; l < levels; ++l) {
      cols.push_back(sigmoid(
          add_scalar(matmul(pyramid[static_cast<std::size_t>(l)], row(p.scai_w, l)),
                     element(p.scai_b, l))));
    }
    return transpose(stack(cols));  // [s, L]
  };
  Tensor<S> e1_audio = gate_scores(pyramid_audio);
  Tensor<S> e1_visual = gate_scores(pyramid_visual);

  const BoolMat dense = BoolMat::Constant(levels, levels, true);
  auto integrate = [&](const std::vector<Tensor<S>>& pyramid, const Tensor<S>& e1_own,
                       const Tensor<S>& e1_other) {
    Tensor<S> q_all = mul_scalar(e1_own, p.scai_wq);
    Tensor<S> k_all = mul_scalar(e1_other, p.scai_wk);
    Tensor<S> v_all = mul_scalar(e1_other, p.scai_wv);
    std::vector<Tensor<S>> rows_out;
    rows_out.reserve(static_cast<std::size_t>(s));
    for (Index t = 0; t < s; ++t) {
      Tensor<S> scores = matmul(reshape(row(q_all, t), {levels, 1}),
                                reshape(row(k_all, t), {1, levels}));
      Tensor<S> att = masked_softmax(scores, dense);  // head dim 1 -> scale 1
      Tensor<S> weights = matmul(att, row(v_all, t));  // [L]
      std::vector<Tensor<S>> level_rows;
      level_rows.reserve(static_cast<std::size_t>(levels));
      for (Index l = 0; l < levels; ++l) {
        level_rows.push_back(row(pyramid[static_cast<std::size_t>(l)], t));
      }
      rows_out.push_back(matmul(weights, stack(level_rows)));  // [C1]
    }
    return stack(rows_out);  // [s, C1]
  };

  return {integrate(pyramid_audio, e1_audio, e1_visual),
          integrate(pyramid_visual, e1_visual, e1_audio)};
}

template <typename S>
struct LgfOutputs {
  std::vector<Tensor<S>> pyramid_audio, pyramid_visual;  // L x [s, C1]
  Tensor<S> e2_audio, e2_visual;                         // [s, C1]
  Tensor<S> e3_audio, e3_visual;                         // [s, C1]
  Tensor<S> e4_audio, e4_visual;                         // [C1]
  Tensor<S> logits;                                      // [classes]
  Tensor<S> branch_audio, branch_visual;                 // [classes]
};

/// Global fusion: unmasked multi-head cross-modal attention, projected
/// residual, mean pool over snippets.
template <typename S>
void glcf_fuse(const LgfConfig& cfg, const LgfParams<S>& p, LgfOutputs<S>& out,
               ForwardTrace<S>* trace = nullptr) {
  const Index s = out.e2_audio.dim(0);
  const BoolMat dense = BoolMat::Constant(s, s, true);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

  auto direction = [&](const Tensor<S>& own, const Tensor<S>& other, const Tensor<S>& proj_w,
                       const Tensor<S>& proj_b, const char* name) {
    typename ForwardTrace<S>::Block* tb = nullptr;
    if (trace) {
      trace->blocks.push_back({name, {}});
      tb = &trace->blocks.back();
    }
    std::vector<Tensor<S>> heads;
    heads.reserve(p.glcf.wq.size());
    for (std::size_t h = 0; h < p.glcf.wq.size(); ++h) {
      Tensor<S> q = matmul(own, p.glcf.wq[h]);
      Tensor<S> k = matmul(other, p.glcf.wk[h]);
      Tensor<S> v = matmul(other, p.glcf.wv[h]);
      Tensor<S> att = masked_softmax(scale(matmul(q, transpose(k)), inv_sqrt_dk), dense);
      if (tb) tb->head_attn.push_back(RowMat<S>(att.mat()));
      heads.push_back(matmul(att, v));
    }
    Tensor<S> e3 = matmul(concat(heads, 1), p.glcf.w2);
    Tensor<S> res = add(add_bias(matmul(e3, proj_w), proj_b), own);
    return std::pair<Tensor<S>, Tensor<S>>{e3, mean_pool(res, 0)};
  };

  auto [e3a, e4a] =
      direction(out.e2_audio, out.e2_visual, p.glcf.proj_w_audio, p.glcf.proj_b_audio,
                "glcf_audio");
  auto [e3v, e4v] =
      direction(out.e2_visual, out.e2_audio, p.glcf.proj_w_visual, p.glcf.proj_b_visual,
                "glcf_visual");
  out.e3_audio = e3a;
  out.e4_audio = e4a;
  out.e3_visual = e3v;
  out.e4_visual = e4v;
}

/// Fusion head over the two pooled embeddings (audio first in every concat).
template <typename S>
Tensor<S> fusion_head(const LgfConfig& cfg, const LgfParams<S>& p, const Tensor<S>& e4_audio,
                      const Tensor<S>& e4_visual) {
  switch (cfg.fusion) {
    case FusionStrategy::kMidConcat:
      return add(matmul(p.head_w, concat<S>({e4_audio, e4_visual}, 0)), p.head_b);
    case FusionStrategy::kSum:
      return add(matmul(p.head_w, add(e4_audio, e4_visual)), p.head_b);
    case FusionStrategy::kEwMultiply:
      return add(matmul(p.head_w, mul(e4_audio, e4_visual)), p.head_b);
    case FusionStrategy::kGated: {
      Tensor<S> cat = concat<S>({e4_audio, e4_visual}, 0);
      Tensor<S> g = sigmoid(add(matmul(p.fuse_gate_w, cat), p.fuse_gate_b));
      Tensor<S> ones = Tensor<S>::full({cfg.channels}, S(1));
      Tensor<S> fused = add(mul(g, e4_audio), mul(sub(ones, g), e4_visual));
      return add(matmul(p.head_w, fused), p.head_b);
    }
    case FusionStrategy::kNeural: {
      Tensor<S> cat = concat<S>({e4_audio, e4_visual}, 0);
      Tensor<S> h = tanh(add(matmul(p.fuse_hidden_w, cat), p.fuse_hidden_b));
      return add(matmul(p.head_w, h), p.head_b);
    }
  }
  throw ContractError("fusion_head: unreachable");
}

/// Full pipeline over one sample's [s, C1] feature pair.
template <typename S>
LgfOutputs<S> lgf_forward(const LgfConfig& cfg, const LgfParams<S>& p, const Tensor<S>& f_audio,
                          const Tensor<S>& f_visual, ForwardTrace<S>* trace = nullptr) {
  cfg.validate();
  if (f_audio.rank() != 2 || f_audio.dim(0) != cfg.snippets || f_audio.dim(1) != cfg.channels ||
      f_audio.shape() != f_visual.shape()) {
    throw ShapeError("lgf_forward: features " + shape_str(f_audio.shape()) + ", " +
                     shape_str(f_visual.shape()) + " do not match config [" +
                     std::to_string(cfg.snippets) + "x" + std::to_string(cfg.channels) + "]");
  }
  if (static_cast<int>(p.layers.size()) != cfg.layers) {
    throw ConfigError("lgf_forward: params built for " + std::to_string(p.layers.size()) +
                      " layers, config says " + std::to_string(cfg.layers));
  }

  LgfOutputs<S> out;
  Tensor<S> a = f_audio, v = f_visual;
  for (int l = 1; l <= cfg.layers; ++l) {
    const auto& lp = p.layers[static_cast<std::size_t>(l - 1)];
    const BoolMat mask = window_mask_matrix(cfg.snippets, cfg.window_half(l));
    auto block = [&](const AttnBlockParams<S>& bp, const Tensor<S>& q_in, const Tensor<S>& kv_in,
                     const std::string& name) {
      typename ForwardTrace<S>::Block* tb = nullptr;
      if (trace) {
        trace->blocks.push_back({"layer" + std::to_string(l - 1) + "/" + name, {}});
        tb = &trace->blocks.back();
      }
      return attention_block(cfg, bp, q_in, kv_in, mask, tb);
    };
    Tensor<S> sa_a = block(lp.sa_audio, a, a, "sa_audio");
    Tensor<S> sa_v = block(lp.sa_visual, v, v, "sa_visual");
    Tensor<S> cma_a = block(lp.cma, a, v, "cma_audio");
    Tensor<S> cma_v = block(lp.cma, v, a, "cma_visual");
    a = dilated_residual(cfg, lp.conv_audio, gated_merge(lp.gate_audio, sa_a, cma_a));
    v = dilated_residual(cfg, lp.conv_visual, gated_merge(lp.gate_visual, sa_v, cma_v));
    out.pyramid_audio.push_back(a);
    out.pyramid_visual.push_back(v);
  }

  auto [e2a, e2v] = scai_integrate(cfg, p, out.pyramid_audio, out.pyramid_visual);
  out.e2_audio = e2a;
  out.e2_visual = e2v;
  glcf_fuse(cfg, p, out, trace);

  out.logits = fusion_head(cfg, p, out.e4_audio, out.e4_visual);
  out.branch_audio = add(matmul(p.branch_w_audio, out.e4_audio), p.branch_b_audio);
  out.branch_visual = add(matmul(p.branch_w_visual, out.e4_visual), p.branch_b_visual);
  return out;
}

}  // namespace avfusion
