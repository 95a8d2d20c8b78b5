#include <gtest/gtest.h>

#include <sstream>

#include "tore/flopcount/flops.hpp"
#include "tore/gtr/model.hpp"

using namespace tore;
using namespace tore::flopcount;

namespace {

double reduction(const std::string& base, const std::string& variant) {
  return reduction_report(model_flops(base), model_flops(variant)).percent;
}

double matmul_part(const Components& c) { return c.qkv + c.scores + c.weighted_sum + c.out_proj + c.feed_forward; }

// Executed transformer + shape flops of one eval forward on random features.
double executed(const gtr::ModelConfig& cfg) {
  gtr::Model<float> model(cfg, 0);
  Rng rng(1);
  NoGradGuard guard;
  const auto out = model.forward_features(randn<float>({cfg.grid, cfg.grid, cfg.backbone_dim}, rng), gtr::Mode::Eval);
  return static_cast<double>(out.flops.transformer + out.flops.shape);
}

}  // namespace

TEST(AttentionFlops, HandExpansion) {
  // 2*3 + 2 + 2 + 2 + 4
  EXPECT_EQ(attention_flops(1, 1, 1, 1, 1), 16.0);
  EXPECT_EQ(attention_flops(2, 3, 4, 5, 2), 2 * 8 * 16 + 4 * 6 * 4 + 2 * 2 * 16 + 4 * 2 * 4 * 5);
}

TEST(AttentionFlops, QuadraticInTokens) {
  LayerSpec a{LayerSpec::Kind::Encoder, 20, 0, 16, 64, 4, 0}, b = a;
  b.queries = 40;
  const auto ca = layer_cost(a), cb = layer_cost(b);
  EXPECT_GT(cb.scores, 2 * ca.scores);
  EXPECT_EQ(ca.scores + ca.weighted_sum, 4.0 * 20 * 20 * 16);
}

TEST(LayerCost, DenseEncoderMatchesClosedForm) {
  for (std::size_t m : {1, 7, 50}) {
    const auto c = layer_cost({LayerSpec::Kind::Encoder, m, 0, 32, 96, 4, 0});
    EXPECT_EQ(matmul_part(c), attention_flops(m, m, 32, 96, 4));
  }
}

TEST(LayerCost, DecoderAddsCrossAttention) {
  const auto c = layer_cost({LayerSpec::Kind::Decoder, 15, 50, 64, 256, 4, 0});
  const double expected = attention_flops(15, 15, 64, 256, 4) + attention_flops(15, 50, 64, 0, 4);
  EXPECT_EQ(matmul_part(c), expected);
}

TEST(LayerCost, SparsePairsReduceScores) {
  const auto dense = layer_cost({LayerSpec::Kind::Encoder, 100, 0, 32, 64, 4, 0});
  const auto sparse = layer_cost({LayerSpec::Kind::Encoder, 100, 0, 32, 64, 4, 700});
  EXPECT_EQ(sparse.scores, 2.0 * 700 * 32);
  EXPECT_LT(sparse.total(), dense.total());
  EXPECT_EQ(sparse.qkv, dense.qkv);
}

TEST(ModelFlops, TotalsAreComponentSums) {
  for (const auto& name : preset_names()) {
    const auto r = model_flops(name);
    Components sum;
    for (const auto& b : r.blocks) {
      sum += b.total;
      EXPECT_GE(b.total.total(), 0.0);
    }
    EXPECT_GT(r.total(), 0.0) << name;
    EXPECT_GE(r.components.total(), sum.total());
    for (double v : {r.components.qkv, r.components.scores, r.components.weighted_sum, r.components.out_proj,
                     r.components.feed_forward, r.components.norms, r.components.softmax, r.components.projections,
                     r.components.elementwise})
      EXPECT_GE(v, 0.0);
  }
}

TEST(ModelFlops, PresetTokenCounts) {
  const auto full = paper_preset("fastmetro_full"), gtr = paper_preset("fastmetro_gtr");
  EXPECT_EQ(full.blocks[1].layer.queries, 446u);
  EXPECT_EQ(gtr.blocks[1].layer.queries, 15u);
  EXPECT_EQ(full.blocks[0].layer.queries, 50u);
  EXPECT_EQ(paper_preset("fastmetro_gtr_itp20").blocks[0].layer.queries, 40u);
  EXPECT_EQ(paper_preset("fastmetro_gtr_itp50").blocks[0].layer.queries, 25u);
  EXPECT_EQ(paper_preset("metro_full").blocks[0].layer.queries, 445u);
  EXPECT_EQ(paper_preset("metro_gtr").blocks[0].layer.queries, 14u);
  EXPECT_THROW(paper_preset("vit_huge"), std::invalid_argument);
  EXPECT_THROW(paper_preset("fastmetro_gtr_itp100"), std::invalid_argument);
}

TEST(ModelFlops, PaperReductions) {
  EXPECT_NEAR(reduction("metro_full", "metro_gtr"), 97.1, 3.0);
  EXPECT_NEAR(reduction("fastmetro_full", "fastmetro_gtr"), 89.4, 3.0);
  EXPECT_NEAR(reduction("fastmetro_gtr", "fastmetro_gtr_itp20"), 14.3, 4.0);
  const double r50 = reduction("fastmetro_gtr", "fastmetro_gtr_itp50");
  EXPECT_GE(r50, 25.0);
  EXPECT_LE(r50, 45.0);
}

TEST(ModelFlops, MonotoneInTokenCount) {
  double prev = 0;
  for (int pct = 90; pct >= 0; pct -= 10) {
    const double t = model_flops("fastmetro_gtr_itp" + std::to_string(pct)).total();
    EXPECT_GT(t, prev);
    prev = t;
  }
  auto a = paper_preset("fastmetro_gtr");
  const double base = model_flops(a).total();
  a.blocks[1].layer.queries += 1;
  EXPECT_GT(model_flops(a).total(), base);
}

TEST(Reduction, IdentityAndHalf) {
  const auto r = model_flops("fastmetro_gtr");
  EXPECT_EQ(reduction_report(r, r).percent, 0.0);
  auto half = r;
  half.components = r.components * 0.5;
  EXPECT_NEAR(reduction_report(r, half).percent, 50.0, 1e-12);
  const auto red = reduction_report(model_flops("fastmetro_full"), r);
  EXPECT_NEAR(red.variant_total, red.base_total * (1 - red.percent / 100), 1e-6 * red.base_total);
}

TEST(FlopsCsv, ColumnsAndTotalRow) {
  std::ostringstream os;
  const auto base = model_flops("fastmetro_gtr"), r = model_flops("fastmetro_gtr_itp20");
  write_flops_csv(os, r, &base);
  const auto s = os.str();
  EXPECT_EQ(s.rfind("preset,component,flops,reduction_vs_base\n", 0), 0u);
  EXPECT_NE(s.find("fastmetro_gtr_itp20,pruner_excluded,"), std::string::npos);
  EXPECT_NE(s.find("fastmetro_gtr_itp20,total,"), std::string::npos);
}

TEST(DescribeVsExecuted, WithinFivePercent) {
  std::vector<gtr::ModelConfig> cfgs(6);
  cfgs[1].shape_head = gtr::ShapeHead::Mlp;
  cfgs[2].geometry_reduction = false;
  cfgs[3].prune_rate = 0.2;
  cfgs[4].variant = gtr::Variant::EncoderOnly;
  cfgs[4].stages = {{64, 256, 4, 1}, {32, 128, 4, 1}};
  cfgs[4].nsr = {32, 128, 4, 1};
  cfgs[5] = cfgs[4];
  cfgs[5].geometry_reduction = false;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const double analytic = model_flops(describe(cfgs[i])).total(), counted = executed(cfgs[i]);
    EXPECT_NEAR(analytic / counted, 1.0, 0.05) << "config " << i;
  }
}
