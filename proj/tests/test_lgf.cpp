// SPDX-License-Identifier: Apache-2.0
//
// Fusion module tests. The attention blocks are verified against an
// independent dense-attention oracle written directly from the formulas with
// plain Eigen expressions; windowing, gating, integration, and the global
// stage get their worked degenerate cases and perturbation properties.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "avfusion/grad_check.hpp"
#include "avfusion/lgf.hpp"
#include "avfusion/loss.hpp"

using namespace avfusion;

namespace {

LgfConfig desk_cfg() {
  LgfConfig cfg;
  cfg.snippets = 4;
  cfg.channels = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.base_window = 1;
  cfg.classes = 6;
  return cfg;
}

RowMat<double> as_mat(const Tensor<double>& t) { return RowMat<double>(t.mat()); }

void fill(Tensor<double>& t, double v) {
  for (auto& x : t.values_mut()) x = v;
}

// --- independent re-implementation of the attention block -----------------

RowMat<double> softmax_rows_oracle(RowMat<double> z) {
  for (Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    z.row(r) = (z.row(r).array() - m).exp();
    z.row(r) /= z.row(r).sum();
  }
  return z;
}

RowMat<double> layer_norm_oracle(const RowMat<double>& x, const RowMat<double>& gain,
                                 const RowMat<double>& bias, double eps) {
  RowMat<double> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    out.row(r) =
        ((x.row(r).array() - mean) / std::sqrt(var + eps)) * gain.array() + bias.array();
  }
  return out;
}

// dense (unmasked) block, straight from the displayed equations
RowMat<double> dense_block_oracle(const LgfConfig& cfg, const AttnBlockParams<double>& p,
                                  const RowMat<double>& q_in, const RowMat<double>& kv_in) {
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  RowMat<double> cat(q_in.rows(), cfg.channels);
  Index at = 0;
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    const RowMat<double> q = q_in * as_mat(p.wq[h]);
    const RowMat<double> k = kv_in * as_mat(p.wk[h]);
    const RowMat<double> v = kv_in * as_mat(p.wv[h]);
    const RowMat<double> att = softmax_rows_oracle(q * k.transpose() * inv_sqrt_dk);
    cat.middleCols(at, cfg.head_dim()) = att * v;
    at += cfg.head_dim();
  }
  const RowMat<double> proj = cat * as_mat(p.wo);
  const RowMat<double> h1 = layer_norm_oracle(q_in + proj, RowMat<double>(p.ln1_g.vec().transpose()),
                                              RowMat<double>(p.ln1_b.vec().transpose()), cfg.ln_eps);
  RowMat<double> ff = (h1 * as_mat(p.ff_w1)).rowwise() + p.ff_b1.vec().transpose();
  ff = ff.array().tanh();
  ff = (ff * as_mat(p.ff_w2)).rowwise() + p.ff_b2.vec().transpose();
  return layer_norm_oracle(h1 + ff, RowMat<double>(p.ln2_g.vec().transpose()),
                           RowMat<double>(p.ln2_b.vec().transpose()), cfg.ln_eps);
}

}  // namespace

TEST_CASE("window_mask worked examples") {
  SUBCASE("interior window") {
    BoolVec m = window_mask(5, 3, 1);
    for (Index j = 0; j < 5; ++j) CHECK(m[j] == (j >= 1 && j <= 3));  // snippets {2,3,4}
  }
  SUBCASE("boundary clamp, checked against enumeration") {
    BoolVec m = window_mask(5, 1, 2);
    for (Index j = 0; j < 5; ++j) CHECK(m[j] == (j <= 2));  // snippets {1,2,3}
    for (Index s = 1; s <= 8; ++s) {
      for (Index t = 1; t <= s; ++t) {
        for (Index d = 0; d <= 3; ++d) {
          BoolVec w = window_mask(s, t, d);
          for (Index j = 1; j <= s; ++j) {
            const bool expect = j >= std::max<Index>(1, t - d) && j <= std::min<Index>(s, t + d);
            CHECK(w[j - 1] == expect);
          }
        }
      }
    }
  }
  SUBCASE("d=0 keeps only t") {
    BoolVec m = window_mask(5, 4, 0);
    for (Index j = 0; j < 5; ++j) CHECK(m[j] == (j == 3));
  }
  CHECK_THROWS_AS(window_mask(5, 0, 1), ContractError);
  CHECK_THROWS_AS(window_mask(5, 6, 1), ContractError);
}

TEST_CASE("single snippet: one key gets full attention, block matches oracle") {
  LgfConfig cfg = desk_cfg();
  cfg.snippets = 1;
  Rng rng(3);
  AttnBlockParams<double> p = AttnBlockParams<double>::init(cfg, rng);
  Tensor<double> q_in = Tensor<double>::randn({1, cfg.channels}, rng);
  Tensor<double> kv_in = Tensor<double>::randn({1, cfg.channels}, rng);

  ForwardTrace<double>::Block trace;
  Tensor<double> out =
      attention_block(cfg, p, q_in, kv_in, window_mask_matrix(1, 0), &trace);
  for (const auto& att : trace.head_attn) {
    CHECK(att.rows() == 1);
    CHECK(att(0, 0) == 1.0);
  }
  const RowMat<double> expect = dense_block_oracle(cfg, p, as_mat(q_in), as_mat(kv_in));
  for (Index j = 0; j < cfg.channels; ++j) {
    CHECK(out.at(0, j) == doctest::Approx(expect(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("attention is exactly zero beyond the window (random configs)") {
  Rng rng(5);
  for (int trial = 0; trial < 12; ++trial) {
    LgfConfig cfg = desk_cfg();
    cfg.snippets = 2 + static_cast<int>(rng.below(7));  // s <= 8
    cfg.heads = 2;
    cfg.channels = 8;
    const Index d = static_cast<Index>(rng.below(4));  // d <= 3
    AttnBlockParams<double> p = AttnBlockParams<double>::init(cfg, rng);
    Tensor<double> a = Tensor<double>::randn({cfg.snippets, cfg.channels}, rng);
    Tensor<double> b = Tensor<double>::randn({cfg.snippets, cfg.channels}, rng);

    ForwardTrace<double>::Block trace;
    attention_block(cfg, p, a, b, window_mask_matrix(cfg.snippets, d), &trace);
    for (const auto& att : trace.head_attn) {
      for (Index t = 0; t < cfg.snippets; ++t) {
        double rowsum = 0.0;
        for (Index u = 0; u < cfg.snippets; ++u) {
          if (std::abs(t - u) > d) CHECK(att(t, u) == 0.0);
          rowsum += att(t, u);
        }
        CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("window covering all snippets equals dense attention") {
  LgfConfig cfg = desk_cfg();
  cfg.snippets = 3;
  Rng rng(7);
  AttnBlockParams<double> p = AttnBlockParams<double>::init(cfg, rng);
  Tensor<double> a = Tensor<double>::randn({3, cfg.channels}, rng);
  Tensor<double> b = Tensor<double>::randn({3, cfg.channels}, rng);

  Tensor<double> windowed = attention_block(cfg, p, a, b, window_mask_matrix(3, 3));
  const RowMat<double> dense = dense_block_oracle(cfg, p, as_mat(a), as_mat(b));
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < cfg.channels; ++j) {
      CHECK(std::abs(windowed.at(i, j) - dense(i, j)) < 1e-10);
    }
  }
}

TEST_CASE("gated merge") {
  LgfConfig cfg = desk_cfg();
  Rng rng(11);
  Tensor<double> fs = Tensor<double>::randn({4, 16}, rng);
  Tensor<double> fc = Tensor<double>::randn({4, 16}, rng);

  SUBCASE("zero parameters give the 0.5/0.5 mix") {
    GateParams<double> p = GateParams<double>::init(cfg, rng);
    fill(p.ws, 0.0);
    fill(p.wc, 0.0);
    Tensor<double> out = gated_merge(p, fs, fc);
    for (Index i = 0; i < 4; ++i) {
      for (Index j = 0; j < 16; ++j) {
        CHECK(out.at(i, j) ==
              doctest::Approx(0.5 * fs.at(i, j) + 0.5 * fc.at(i, j)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("saturated gates select one branch") {
    GateParams<double> p = GateParams<double>::init(cfg, rng);
    fill(p.ws, 0.0);
    fill(p.wc, 0.0);
    fill(p.bs, 50.0);
    fill(p.bc, -50.0);
    Tensor<double> out = gated_merge(p, fs, fc);
    for (Index i = 0; i < 4; ++i) {
      for (Index j = 0; j < 16; ++j) {
        CHECK(out.at(i, j) == doctest::Approx(fs.at(i, j)).epsilon(1e-9));
      }
    }
  }
  SUBCASE("random parameters match an independent re-evaluation") {
    GateParams<double> p = GateParams<double>::init(cfg, rng);
    Tensor<double> out = gated_merge(p, fs, fc);
    RowMat<double> cat(4, 32);
    cat << as_mat(fs), as_mat(fc);
    const RowMat<double> gs =
        (1.0 / (1.0 + (-((cat * as_mat(p.ws)).rowwise() + p.bs.vec().transpose()).array()).exp()));
    const RowMat<double> gc =
        (1.0 / (1.0 + (-((cat * as_mat(p.wc)).rowwise() + p.bc.vec().transpose()).array()).exp()));
    const RowMat<double> expect =
        gs.array() * as_mat(fs).array() + gc.array() * as_mat(fc).array();
    for (Index i = 0; i < 4; ++i) {
      for (Index j = 0; j < 16; ++j) {
        CHECK(out.at(i, j) == doctest::Approx(expect(i, j)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("dilated residual stack") {
  LgfConfig cfg = desk_cfg();
  Rng rng(13);

  SUBCASE("zero kernels are the identity") {
    std::vector<Tensor<double>> kernels = {Tensor<double>::zeros({16, 3}),
                                           Tensor<double>::zeros({16, 3})};
    Tensor<double> x = Tensor<double>::randn({4, 16}, rng);
    Tensor<double> out = dilated_residual(cfg, kernels, x);
    for (Index i = 0; i < 4; ++i) {
      for (Index j = 0; j < 16; ++j) CHECK(out.at(i, j) == x.at(i, j));
    }
  }
  SUBCASE("single snippet sees only its padded self") {
    LgfConfig one = cfg;
    one.conv_dilations = {1};
    Tensor<double> k = Tensor<double>::randn({16, 3}, rng);
    Tensor<double> x = Tensor<double>::randn({1, 16}, rng);
    Tensor<double> out = dilated_residual(one, {k}, x);
    for (Index j = 0; j < 16; ++j) {
      // zero padding leaves only the center tap: out = x + k_center * x
      CHECK(out.at(0, j) == doctest::Approx(x.at(0, j) * (1.0 + k.at(j, 1))).epsilon(1e-12));
    }
  }
  SUBCASE("gradients pass the finite-difference oracle") {
    Tensor<double> k1 = Tensor<double>::randn({6, 3}, rng).set_requires_grad();
    Tensor<double> k2 = Tensor<double>::randn({6, 3}, rng).set_requires_grad();
    Tensor<double> x = Tensor<double>::randn({5, 6}, rng).set_requires_grad();
    auto r = grad_check(
        [&] {
          LgfConfig c = desk_cfg();
          c.conv_dilations = {1, 2};
          return sum(dilated_residual(c, {k1, k2}, x));
        },
        {{"k1", k1}, {"k2", k2}, {"x", x}});
    CHECK(r.pass);
  }
}

TEST_CASE("selective integration") {
  SUBCASE("single level: cross-weighting degenerates to the other gate score") {
    LgfConfig cfg = desk_cfg();
    cfg.layers = 1;
    Rng rng(17);
    LgfParams<double> p = LgfParams<double>::init(cfg, rng);
    fill(p.scai_wq, 1.0);
    fill(p.scai_wk, 1.0);
    fill(p.scai_wv, 1.0);

    Tensor<double> fa = Tensor<double>::randn({4, 16}, rng);
    Tensor<double> fv = Tensor<double>::randn({4, 16}, rng);
    auto [e2a, e2v] = scai_integrate(cfg, p, {fa}, {fv});

    // expected gate scores, recomputed independently
    auto scores = [&](const Tensor<double>& f) {
      VecX<double> w = p.scai_w.mat().row(0).transpose();
      VecX<double> col = as_mat(f) * w;
      return (1.0 / (1.0 + (-(col.array() + p.scai_b.vec()[0])).exp())).matrix().eval();
    };
    const VecX<double> ga = scores(fa), gv = scores(fv);
    for (Index t = 0; t < 4; ++t) {
      for (Index j = 0; j < 16; ++j) {
        CHECK(e2a.at(t, j) == doctest::Approx(fa.at(t, j) * gv[t]).epsilon(1e-12));
        CHECK(e2v.at(t, j) == doctest::Approx(fv.at(t, j) * ga[t]).epsilon(1e-12));
      }
    }
  }
  SUBCASE("identical pyramid levels factor out of the weighted sum") {
    LgfConfig cfg = desk_cfg();
    cfg.layers = 2;
    Rng rng(19);
    LgfParams<double> p = LgfParams<double>::init(cfg, rng);
    Tensor<double> f = Tensor<double>::randn({4, 16}, rng);
    Tensor<double> g = Tensor<double>::randn({4, 16}, rng);
    auto [e2a, e2v] = scai_integrate(cfg, p, {f, f}, {g, g});

    // with F^1 = F^2 = F the stacked rows are equal, so E2 = F * sum(Att),
    // and each attention row sums to 1 by the softmax property
    for (Index t = 0; t < 4; ++t) {
      // identical levels also force identical gate scores, so the attention
      // weights v_l are equal; their sum is the common value * L... recover
      // the factor from one channel and check consistency across the rest
      const double factor = e2a.at(t, 0) / f.at(t, 0);
      CHECK(std::isfinite(factor));
      for (Index j = 1; j < 16; ++j) {
        CHECK(e2a.at(t, j) == doctest::Approx(f.at(t, j) * factor).epsilon(1e-9));
      }
      const double factor_v = e2v.at(t, 0) / g.at(t, 0);
      for (Index j = 1; j < 16; ++j) {
        CHECK(e2v.at(t, j) == doctest::Approx(g.at(t, j) * factor_v).epsilon(1e-9));
      }
    }
  }
  SUBCASE("mismatched pyramid depths are rejected") {
    LgfConfig cfg = desk_cfg();
    Rng rng(23);
    LgfParams<double> p = LgfParams<double>::init(cfg, rng);
    Tensor<double> f = Tensor<double>::randn({4, 16}, rng);
    CHECK_THROWS_AS(scai_integrate(cfg, p, {f, f}, {f}), ShapeError);
  }
}

TEST_CASE("global fusion stage") {
  LgfConfig cfg = desk_cfg();
  Rng rng(29);

  SUBCASE("zero projection reduces to mean pooling of the integrated features") {
    LgfParams<double> p = LgfParams<double>::init(cfg, rng);
    fill(p.glcf.proj_w_audio, 0.0);
    fill(p.glcf.proj_b_audio, 0.0);
    LgfOutputs<double> out;
    out.e2_audio = Tensor<double>::randn({4, 16}, rng);
    out.e2_visual = Tensor<double>::randn({4, 16}, rng);
    glcf_fuse(cfg, p, out);
    for (Index j = 0; j < 16; ++j) {
      double mean = 0.0;
      for (Index t = 0; t < 4; ++t) mean += out.e2_audio.at(t, j);
      CHECK(out.e4_audio.at(j) == doctest::Approx(mean / 4.0).epsilon(1e-12));
    }
  }
  SUBCASE("single snippet: pooling is the identity over one row") {
    LgfConfig one = cfg;
    one.snippets = 1;
    LgfParams<double> p = LgfParams<double>::init(one, rng);
    LgfOutputs<double> out;
    out.e2_audio = Tensor<double>::randn({1, 16}, rng);
    out.e2_visual = Tensor<double>::randn({1, 16}, rng);
    glcf_fuse(one, p, out);
    // recompute: e4 = (proj(e3) + e2) row 0
    const RowMat<double> e3 = as_mat(out.e3_audio);
    const RowMat<double> expect =
        (e3 * as_mat(p.glcf.proj_w_audio)).rowwise() + p.glcf.proj_b_audio.vec().transpose();
    for (Index j = 0; j < 16; ++j) {
      CHECK(out.e4_audio.at(j) ==
            doctest::Approx(expect(0, j) + out.e2_audio.at(0, j)).epsilon(1e-12));
    }
  }
  SUBCASE("global attention is dense: no zero weight anywhere") {
    LgfParams<double> p = LgfParams<double>::init(cfg, rng);
    LgfOutputs<double> out;
    out.e2_audio = Tensor<double>::randn({4, 16}, rng);
    out.e2_visual = Tensor<double>::randn({4, 16}, rng);
    ForwardTrace<double> trace;
    glcf_fuse(cfg, p, out, &trace);
    REQUIRE(trace.blocks.size() == 2);
    for (const auto& block : trace.blocks) {
      for (const auto& att : block.head_attn) {
        for (Index i = 0; i < att.rows(); ++i) {
          for (Index j = 0; j < att.cols(); ++j) CHECK(att(i, j) > 0.0);
        }
      }
    }
  }
}

TEST_CASE("fusion head") {
  LgfConfig cfg = desk_cfg();
  Rng rng(31);
  LgfParams<double> p = LgfParams<double>::init(cfg, rng);

  SUBCASE("zero inputs give the bias") {
    fill(p.head_b, 0.25);
    Tensor<double> z = Tensor<double>::zeros({16});
    Tensor<double> logits = fusion_head(cfg, p, z, z);
    REQUIRE(logits.size() == 6);
    for (Index i = 0; i < 6; ++i) CHECK(logits.at(i) == 0.25);
  }
  SUBCASE("swapping concat order with permuted columns leaves logits unchanged") {
    Tensor<double> ea = Tensor<double>::randn({16}, rng);
    Tensor<double> ev = Tensor<double>::randn({16}, rng);
    Tensor<double> base = fusion_head(cfg, p, ea, ev);

    LgfParams<double> swapped = p;
    swapped.head_w = Tensor<double>::zeros({6, 32});
    auto w = p.head_w.mat();
    auto sw = swapped.head_w.values_mut();
    for (Index i = 0; i < 6; ++i) {
      for (Index j = 0; j < 16; ++j) {
        sw[static_cast<std::size_t>(i * 32 + j)] = w(i, j + 16);       // visual block first
        sw[static_cast<std::size_t>(i * 32 + 16 + j)] = w(i, j);       // audio block second
      }
    }
    Tensor<double> flipped = fusion_head(cfg, swapped, ev, ea);
    for (Index i = 0; i < 6; ++i) {
      CHECK(flipped.at(i) == doctest::Approx(base.at(i)).epsilon(1e-12));
    }
  }
  SUBCASE("sum strategy equals mid-concat whose column halves duplicate W") {
    // [W | W] . [v; v] = 2 W v = W (v + v)
    Tensor<double> v = Tensor<double>::randn({16}, rng);

    LgfConfig sum_cfg = cfg;
    sum_cfg.fusion = FusionStrategy::kSum;
    Rng rng2(1);
    LgfParams<double> ps = LgfParams<double>::init(sum_cfg, rng2);

    LgfParams<double> pc = p;
    pc.head_b = ps.head_b;
    pc.head_w = Tensor<double>::zeros({6, 32});
    auto wsum = ps.head_w.mat();
    auto wcat = pc.head_w.values_mut();
    for (Index i = 0; i < 6; ++i) {
      for (Index j = 0; j < 16; ++j) {
        wcat[static_cast<std::size_t>(i * 32 + j)] = wsum(i, j);
        wcat[static_cast<std::size_t>(i * 32 + 16 + j)] = wsum(i, j);
      }
    }
    Tensor<double> via_sum = fusion_head(sum_cfg, ps, v, v);
    Tensor<double> via_cat = fusion_head(cfg, pc, v, v);
    for (Index i = 0; i < 6; ++i) {
      CHECK(via_sum.at(i) == doctest::Approx(via_cat.at(i)).epsilon(1e-12));
    }
  }
  SUBCASE("every strategy produces class logits") {
    Tensor<double> ea = Tensor<double>::randn({16}, rng);
    Tensor<double> ev = Tensor<double>::randn({16}, rng);
    for (FusionStrategy f : {FusionStrategy::kMidConcat, FusionStrategy::kSum,
                             FusionStrategy::kEwMultiply, FusionStrategy::kGated,
                             FusionStrategy::kNeural}) {
      LgfConfig c = cfg;
      c.fusion = f;
      Rng r(static_cast<std::uint64_t>(f) + 100);
      LgfParams<double> params = LgfParams<double>::init(c, r);
      Tensor<double> logits = fusion_head(c, params, ea, ev);
      CHECK(logits.size() == 6);
      CHECK(logits.all_finite());
    }
  }
}

TEST_CASE("cross-modal block parameters are one shared set") {
  LgfConfig cfg = desk_cfg();
  Rng rng(37);
  LgfParams<double> p = LgfParams<double>::init(cfg, rng);

  Tensor<double> a = Tensor<double>::randn({4, 16}, rng);
  Tensor<double> v = Tensor<double>::randn({4, 16}, rng);
  const BoolMat mask = window_mask_matrix(4, 1);

  Tensor<double> before_av = attention_block(cfg, p.layers[0].cma, a, v, mask);
  Tensor<double> before_va = attention_block(cfg, p.layers[0].cma, v, a, mask);

  // mutating the shared weight is observed by both directions
  p.layers[0].cma.wq[0].values_mut()[0] += 0.5;
  Tensor<double> after_av = attention_block(cfg, p.layers[0].cma, a, v, mask);
  Tensor<double> after_va = attention_block(cfg, p.layers[0].cma, v, a, mask);

  bool av_changed = false, va_changed = false;
  for (Index i = 0; i < 4 * 16; ++i) {
    av_changed = av_changed || before_av.values()[static_cast<std::size_t>(i)] !=
                                   after_av.values()[static_cast<std::size_t>(i)];
    va_changed = va_changed || before_va.values()[static_cast<std::size_t>(i)] !=
                                   after_va.values()[static_cast<std::size_t>(i)];
  }
  CHECK(av_changed);
  CHECK(va_changed);

  // and the manifest carries one entry per shared tensor, not two
  int cma_wq0 = 0;
  for (const auto& [name, t] : p.named()) {
    if (name == "layer0/cma/wq0") ++cma_wq0;
  }
  CHECK(cma_wq0 == 1);
}

TEST_CASE("full forward: shape contract and finiteness") {
  LgfConfig cfg = desk_cfg();
  Rng rng(41);
  LgfParams<double> p = LgfParams<double>::init(cfg, rng);
  Tensor<double> fa = Tensor<double>::randn({4, 16}, rng);
  Tensor<double> fv = Tensor<double>::randn({4, 16}, rng);

  LgfOutputs<double> out = lgf_forward(cfg, p, fa, fv);
  CHECK(out.logits.shape() == Shape{6});
  CHECK(out.e4_audio.shape() == Shape{16});
  CHECK(out.e4_visual.shape() == Shape{16});
  CHECK(out.e2_audio.shape() == Shape{4, 16});
  CHECK(out.e3_visual.shape() == Shape{4, 16});
  CHECK(out.branch_audio.shape() == Shape{6});
  CHECK(out.pyramid_audio.size() == 2);
  CHECK(out.logits.all_finite());
  CHECK(out.e3_audio.all_finite());

  CHECK_THROWS_AS(lgf_forward(cfg, p, Tensor<double>::zeros({4, 8}), fv), ShapeError);
}

TEST_CASE("window locality: rows beyond the receptive radius are untouched") {
  LgfConfig cfg;
  cfg.snippets = 8;
  cfg.channels = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.base_window = 1;
  cfg.conv_dilations = {1};  // conv reach 1 per layer with kernel 3
  cfg.classes = 6;
  Rng rng(43);
  LgfParams<double> p = LgfParams<double>::init(cfg, rng);

  Tensor<double> fa = Tensor<double>::randn({8, 8}, rng);
  Tensor<double> fv = Tensor<double>::randn({8, 8}, rng);
  LgfOutputs<double> base = lgf_forward(cfg, p, fa, fv);

  const Index u = 0;  // perturbed input row
  Tensor<double> fa2 = Tensor<double>::from(fa.shape(),
                                            {fa.values().begin(), fa.values().end()});
  fa2.values_mut()[static_cast<std::size_t>(u * 8)] += 1.0;
  LgfOutputs<double> pert = lgf_forward(cfg, p, fa2, fv);

  // per-layer radius: attention half-width (1, then 2) plus conv reach 1
  const Index radius[2] = {2, 2 + 3};
  for (int l = 0; l < 2; ++l) {
    for (Index t = 0; t < 8; ++t) {
      bool same_a = true, same_v = true;
      for (Index j = 0; j < 8; ++j) {
        same_a = same_a && base.pyramid_audio[static_cast<std::size_t>(l)].at(t, j) ==
                               pert.pyramid_audio[static_cast<std::size_t>(l)].at(t, j);
        same_v = same_v && base.pyramid_visual[static_cast<std::size_t>(l)].at(t, j) ==
                               pert.pyramid_visual[static_cast<std::size_t>(l)].at(t, j);
      }
      if (std::abs(t - u) > radius[l]) {
        CHECK(same_a);
        CHECK(same_v);
      } else if (t == u) {
        CHECK_FALSE(same_a);
      }
    }
  }
}

TEST_CASE("small full-model gradient check passes at 1e-4") {
  LgfConfig cfg;
  cfg.snippets = 3;
  cfg.channels = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.base_window = 1;
  cfg.classes = 6;
  Rng rng(47);
  LgfParams<double> p = LgfParams<double>::init(cfg, rng);
  Tensor<double> fa = Tensor<double>::randn({3, 8}, rng);
  Tensor<double> fv = Tensor<double>::randn({3, 8}, rng);
  const PolarityMap pmap = PolarityMap::six_emotions();
  LossConfig loss_cfg;

  auto objective = [&] {
    LgfOutputs<double> out = lgf_forward(cfg, p, fa, fv);
    return multi_task_loss(stack<double>({out.logits}), stack<double>({out.branch_visual}),
                           stack<double>({out.branch_audio}), {4}, loss_cfg, pmap);
  };
  auto report = grad_check(objective, p.named());
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-4);
}
