#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

using namespace acacr;
using acacr::testing::random_tensor;
using V = Var<double>;

namespace {

AttentionConfig cfg_of(AttentionVariant v, std::size_t c = 4, std::size_t s = 2) { return {v, s, c}; }

// He-normal weights with the selection output convs randomised too, so every
// branch of the pipeline is live.
AttentionParams<double> live_params(const AttentionConfig& cfg, std::uint64_t seed) {
  RngStream rng(seed);
  auto p = init_attention<double>(cfg, rng);
  if (p.selection) {
    p.selection->weight.out = normal_tensor<double>(p.selection->weight.out.shape(), rng, 0.5);
    p.selection->bias.out = normal_tensor<double>(p.selection->bias.out.shape(), rng, 0.5);
  }
  return p;
}

Tensor<double> row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({1, n}, std::move(v));
}

}  // namespace

TEST(Attention, ConfigValidation) {
  EXPECT_THROW(cfg_of(AttentionVariant::ac, 6).validate(), ConfigError);
  EXPECT_NO_THROW(cfg_of(AttentionVariant::ca, 6).validate());
  EXPECT_THROW(cfg_of(AttentionVariant::ac, 8, 0).validate(), ConfigError);
  EXPECT_EQ(cfg_of(AttentionVariant::ac, 32).selection_hidden(), 8u);
  EXPECT_EQ(parse_attention_variant("ca"), AttentionVariant::ca);
  EXPECT_THROW(parse_attention_variant("xx"), ConfigError);
}

TEST(Attention, EmbedIdentityAndZero) {
  const auto cfg = cfg_of(AttentionVariant::ca);
  RngStream rng(1);
  auto p = init_attention<double>(cfg, rng);
  Tensor<double> eye({1, 1, 4, 4});
  for (std::size_t c = 0; c < 4; ++c) eye[c * 4 + c] = 1;
  p.query = p.key = p.value = eye;
  Tape<double> t;
  const auto f = random_tensor({3, 5, 4}, 2);
  const auto qkv = embed_qkv(t.constant(f), bind(t, p, false));
  EXPECT_EQ(qkv.q.value(), f);
  EXPECT_EQ(qkv.k.value(), f);
  EXPECT_EQ(qkv.v.value(), f);
  p.query = Tensor<double>({1, 1, 4, 4});
  EXPECT_EQ(embed_qkv(t.constant(f), bind(t, p, false)).q.value(), Tensor<double>({3, 5, 4}));
  EXPECT_THROW(embed_qkv(t.constant(random_tensor({3, 5, 3}, 1)), bind(t, p, false)), ShapeError);
}

TEST(Attention, VanillaSingleTokenAndUniform) {
  const auto cfg = cfg_of(AttentionVariant::vanilla);
  RngStream rng(3);
  auto p = init_attention<double>(cfg, rng);
  Tape<double> t;
  const auto one = random_tensor({1, 1, 4}, 4);
  const auto r1 = vanilla_attention(t.constant(one), bind(t, p, false));
  EXPECT_NEAR(r1.similarity->value()[0], 1.0, 1e-15);
  EXPECT_LE(max_abs_diff(r1.output.value(), embed_qkv(t.constant(one), bind(t, p, false)).v.value()), 1e-15);

  p.key = Tensor<double>({1, 1, 4, 4});
  const auto f = random_tensor({3, 3, 4}, 5);
  const auto w = bind(t, p, false);
  const auto r = vanilla_attention(t.constant(f), w);
  const auto v = embed_qkv(t.constant(f), w).v.value();
  for (std::size_t c = 0; c < 4; ++c) {
    double m = 0;
    for (std::size_t i = 0; i < 9; ++i) m += v[i * 4 + c] / 9;
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(r.output.value()[i * 4 + c], m, 1e-12);
  }
  const auto& s = r.similarity->value();
  for (std::size_t i = 0; i < 9; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 9; ++j) sum += s.at(i, j);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Attention, PatchSimilarityExamples) {
  Tape<double> t;
  const auto q1 = random_tensor({1, 8}, 1);
  EXPECT_NEAR(patch_similarity(t.constant(q1), t.constant(random_tensor({1, 8}, 2))).value()[0], 1.0, 1e-15);
  const auto k = random_tensor({1, 8}, 3);
  Tensor<double> k2({2, 8});
  for (std::size_t j = 0; j < 8; ++j) k2[j] = k2[8 + j] = k[j];
  const auto s = patch_similarity(t.constant(random_tensor({3, 8}, 4)), t.constant(k2)).value();
  for (double v : s.values()) EXPECT_NEAR(v, 0.5, 1e-15);
  EXPECT_THROW(patch_similarity(t.constant(random_tensor({3, 8}, 4)), t.constant(random_tensor({3, 6}, 4))),
               ShapeError);
}

TEST(Attention, SelectionParamsContract) {
  const auto cfg = cfg_of(AttentionVariant::ac, 8);
  RngStream rng(9);
  const auto p = init_attention<double>(cfg, rng);
  Tape<double> t;
  const auto w = bind(t, p, false);
  const auto [w_sel, b_sel] = selection_params(t.constant(random_tensor({4, 6, 8}, 1)), *w.selection, 2);
  EXPECT_EQ(w_sel.shape(), (Shape{6, 1}));
  EXPECT_EQ(w_sel.value(), Tensor<double>({6, 1}, 1.0));
  EXPECT_EQ(b_sel.value(), Tensor<double>({6, 1}, 0.0));

  const auto live = live_params(cfg, 2);
  const auto lw = bind(t, live, false);
  const auto [cw, cb] = selection_params(t.constant(Tensor<double>({4, 4, 8}, 0.7)), *lw.selection, 2);
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_NEAR(cw.value()[i], cw.value()[0], 1e-14);
    EXPECT_NEAR(cb.value()[i], cb.value()[0], 1e-14);
  }
}

TEST(Attention, SelectionPoolingIsPatchMean) {
  const auto cfg = cfg_of(AttentionVariant::ac, 4);
  const auto p = live_params(cfg, 4);
  Tape<double> t;
  const auto w = bind(t, p, false);
  const auto q = t.constant(random_tensor({4, 4, 4}, 5));
  const auto map = conv2d(relu(conv2d(q, w.selection->weight.hidden)), w.selection->weight.out).value();
  const auto [w_sel, b_sel] = selection_params(q, *w.selection, 2);
  const double want = 1.0 + (map.at(0, 2, 0) + map.at(0, 3, 0) + map.at(1, 2, 0) + map.at(1, 3, 0)) / 4;
  EXPECT_NEAR(w_sel.value()[1], want, 1e-14);
}

TEST(Attention, AdjustSimilarityExamples) {
  Tape<double> t;
  const auto ad = adjust_similarity(t.constant(row({0.5, 0.3, 0.2}))).value();
  EXPECT_NEAR(ad[0], 1.0 / 6, 1e-15);
  EXPECT_NEAR(ad[1], -1.0 / 30, 1e-15);
  EXPECT_NEAR(ad[2], -2.0 / 15, 1e-15);
  for (double v : adjust_similarity(t.constant(row({0.25, 0.25, 0.25, 0.25}))).value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, AttentiveTransformExamples) {
  Tape<double> t;
  const auto s_ad = t.constant(row({1.0 / 6, -1.0 / 30, -2.0 / 15}));
  const auto one = t.constant(Tensor<double>({1, 1}, 1.0));
  const auto zero = t.constant(Tensor<double>({1, 1}, 0.0));
  const auto r = attentive_transform(s_ad, one, zero).value();
  EXPECT_NEAR(r[0], 1.0 / 6, 1e-15);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 0.0);
  const auto c = attentive_transform(s_ad, zero, t.constant(Tensor<double>({1, 1}, 0.3))).value();
  for (double v : c.values()) EXPECT_EQ(v, 0.3);

  const auto s_p = t.constant(row({0.5, 0.3, 0.2}));
  const auto back = attentive_transform(adjust_similarity(s_p), one, t.constant(Tensor<double>({1, 1}, 1.0 / 3)));
  EXPECT_LE(max_abs_diff(back.value(), s_p.value()), 1e-15);
  EXPECT_THROW(attentive_transform(s_ad, t.constant(Tensor<double>({2, 1}, 1.0)), zero), ShapeError);
}

TEST(Attention, AttendPatchesExamples) {
  Tape<double> t;
  const auto v = random_tensor({3, 4}, 1);
  Tensor<double> s({3, 3});
  s.at(0, 2) = 1;
  s.at(2, 0) = s.at(2, 1) = s.at(2, 2) = 1.0 / 3;
  const auto o = attend_patches(t.constant(s), t.constant(v)).value();
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(o.at(0, j), v.at(2, j));
    EXPECT_EQ(o.at(1, j), 0.0);
    EXPECT_NEAR(o.at(2, j), (v.at(0, j) + v.at(1, j) + v.at(2, j)) / 3, 1e-15);
  }
}

TEST(Attention, InitialisedAcIsMeanThresholdedCa) {
  const auto cfg = cfg_of(AttentionVariant::ac, 4);
  RngStream rng(5);
  const auto p = init_attention<double>(cfg, rng);
  Tape<double> t;
  const auto r = ac_attention_forward(t.constant(random_tensor({4, 4, 4}, 6)), bind(t, p, false), cfg);
  const auto& s_p = r.similarity->value();
  const auto& s_att = r.attentive->value();
  const std::size_t n = s_p.dim(0);
  for (std::size_t i = 0; i < s_p.size(); ++i) {
    EXPECT_NEAR(s_att[i], std::max(0.0, s_p[i] - 1.0 / static_cast<double>(n)), 1e-15);
  }
}

TEST(Attention, CaReductionFiftyInputs) {
  const auto cfg = cfg_of(AttentionVariant::ac, 8);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = live_params(cfg, seed);
    Tape<double> t;
    const auto w = bind(t, p, false);
    const auto f = t.constant(random_tensor({6, 4, 8}, 1000 + seed));
    const double n_p = 6.0;
    const auto ac = ac_attention_forward(f, w, cfg, SelectionOverride{1.0, 1.0 / n_p});
    const auto ca = ca_attention_forward(f, w, cfg);
    worst = std::max(worst, max_abs_diff(ac.output.value(), ca.output.value()));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Attention, CaSinglePatchIsConvOfV) {
  const auto cfg = cfg_of(AttentionVariant::ca, 4, 2);
  RngStream rng(8);
  const auto p = init_attention<double>(cfg, rng);
  Tape<double> t;
  const auto w = bind(t, p, false);
  const auto f = t.constant(random_tensor({2, 2, 4}, 9));
  const auto r = ca_attention_forward(f, w, cfg);
  EXPECT_LE(max_abs_diff(r.output.value(), conv2d(embed_qkv(f, w).v, w.output).value()), 1e-14);
  EXPECT_THROW(ca_attention_forward(t.constant(random_tensor({3, 4, 4}, 1)), w, cfg), ShapeError);
}

TEST(Attention, NormalisationInvariants) {
  const auto cfg = cfg_of(AttentionVariant::ac, 8);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = live_params(cfg, seed);
    Tape<double> t;
    const auto f = t.constant(random_tensor({8, 8, 8}, 50 + seed, -2, 2));
    const auto r = ac_attention_forward(f, bind(t, p, false), cfg);
    const auto& s_p = r.similarity->value();
    const auto s_ad = adjust_similarity(*r.similarity).value();
    for (std::size_t i = 0; i < s_p.dim(0); ++i) {
      double a = 0, b = 0;
      for (std::size_t j = 0; j < s_p.dim(1); ++j) {
        a += s_p.at(i, j);
        b += s_ad.at(i, j);
      }
      EXPECT_NEAR(a, 1.0, 1e-6);
      EXPECT_NEAR(b, 0.0, 1e-6);
    }
    for (double v : r.attentive->value().values()) EXPECT_GE(v, 0.0);
  }
}

TEST(Attention, PermutingKeysPermutesColumns) {
  Tape<double> t;
  const auto q = random_tensor({4, 6}, 1), k = random_tensor({4, 6}, 2), v = random_tensor({4, 6}, 3);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor<double> kp(k.shape()), vp(v.shape());
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      kp.at(i, j) = k.at(perm[i], j);
      vp.at(i, j) = v.at(perm[i], j);
    }
  }
  const auto s = patch_similarity(t.constant(q), t.constant(k));
  const auto sp = patch_similarity(t.constant(q), t.constant(kp));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(sp.value().at(i, j), s.value().at(i, perm[j]), 1e-15);
  }
  const auto o = attend_patches(s, t.constant(v)).value();
  const auto op = attend_patches(sp, t.constant(vp)).value();
  EXPECT_LE(max_abs_diff(o, op), 1e-14);
}

TEST(Attention, GradCheckAllVariants) {
  for (AttentionVariant variant : {AttentionVariant::vanilla, AttentionVariant::ca, AttentionVariant::ac}) {
    const auto cfg = cfg_of(variant, 4);
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto p = live_params(cfg, seed);
      std::vector<Tensor<double>> inputs{random_tensor({8, 8, 4}, 500 + seed)};
      p.for_each([&](const char*, const Tensor<double>& x) { inputs.push_back(x); });
      auto f = [&](Tape<double>& t, std::span<const V> v) {
        AttentionWeights<V> w = bind(t, p, false);
        std::size_t k = 1;
        w.for_each([&](const char*, V& slot) { slot = v[k++]; });
        const auto out = attention_forward(v[0], w, cfg).output;
        return sum(mul(out, t.constant(random_tensor(out.shape(), 77))));
      };
      worst = std::max(worst, grad_check(f, inputs, {.max_coords = 24, .seed = seed}).max_rel_error);
    }
    EXPECT_LE(worst, 1e-4) << to_string(variant);
  }
}

TEST(Similarity, TopPatches) {
  const std::vector<double> r{0.1, 0.4, 0.4, 0.05, 0.05};
  const auto all = top_patches(r, 5, 1.0);
  ASSERT_EQ(all.size(), 5u);
  EXPECT_EQ(all[0].patch_index, 1u);
  EXPECT_EQ(all[1].patch_index, 2u);
  EXPECT_EQ(all[3].patch_index, 3u);
  EXPECT_EQ(top_patches(r, 5, 0.3).size(), 2u);
  const std::vector<double> uniform(10, 0.1);
  const auto u = top_patches(uniform, 5, 0.3);
  ASSERT_EQ(u.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(u[i].patch_index, i);
  EXPECT_EQ(u[2].row, 0u);
  const std::vector<double> one_hot{0, 0, 0.7, 0};
  const auto oh = top_patches(one_hot, 2, 0.75);
  ASSERT_EQ(oh.size(), 3u);
  EXPECT_EQ(oh[0].patch_index, 2u);
  EXPECT_EQ(oh[1].score, 0.0);
  EXPECT_EQ(oh[1].patch_index, 0u);
  EXPECT_THROW(top_patches(r, 5, 0.0), ConfigError);
  EXPECT_THROW(top_patches(r, 5, 1.5), ConfigError);
}

TEST(Similarity, QueryMapping) {
  EXPECT_EQ(query_patch_index(0, 0, 4, 4), 0u);
  EXPECT_EQ(query_patch_index(1, 1, 4, 4), 15u);
  EXPECT_EQ(query_patch_index(0.3, 0.6, 4, 4), 1u * 4 + 2);
  EXPECT_EQ(query_patch_index(0.3, 0.6, 8, 8), 2u * 8 + 4);
  EXPECT_THROW(query_patch_index(-0.1, 0.5, 4, 4), ConfigError);
  EXPECT_THROW(query_patch_index(0.5, 1.1, 4, 4), ConfigError);
}

TEST(Similarity, ExportAndFiles) {
  const auto cfg = cfg_of(AttentionVariant::ac, 4);
  RngStream rng(2);
  const auto p = init_attention<double>(cfg, rng);
  const auto f = random_tensor({8, 8, 4}, 3);
  const auto ex = export_similarity(f, p, cfg, 5, 0.25);
  EXPECT_EQ(ex.s_p_row.size(), 16u);
  EXPECT_EQ(ex.top_s_p.size(), 4u);
  EXPECT_EQ(ex.top_s_att.size(), 4u);
  EXPECT_GE(std::count(ex.s_att_row.begin(), ex.s_att_row.end(), 0.0), 1);
  EXPECT_EQ(std::count(ex.s_p_row.begin(), ex.s_p_row.end(), 0.0), 0);
  EXPECT_THROW(export_similarity(f, p, cfg, 16, 0.25), ConfigError);

  const auto dir = acacr::testing::scratch_dir("similarity");
  write_similarity_export(dir, "q", ex);
  const std::string csv = acacr::testing::slurp(dir / "q.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "patch_index,row,col,s_p,s_att");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 17);
  const Image8 heat = read_png(dir / "q.s_att.png");
  EXPECT_EQ(heat.width, 4u);
  EXPECT_EQ(heat.channels, 1u);
  EXPECT_GE(std::count(heat.pixels.begin(), heat.pixels.end(), 0), 1);
  EXPECT_EQ(*std::max_element(heat.pixels.begin(), heat.pixels.end()), 255);
}
