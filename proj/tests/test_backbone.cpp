#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace f4d;
using testutil::normal;

namespace {

LayerCost only_row(const ComplexityReport& r) {
  EXPECT_EQ(r.rows.size(), 1u);
  return r.rows.at(0);
}

std::uint64_t conv_macs(const ComplexityReport& r) {
  std::uint64_t m = 0;
  for (const auto& row : r.rows)
    if (row.kind == "conv") m += row.macs;
  return m;
}

BackbonePlan small_plan() {
  auto s = ToySetup::smoke();
  return s.plan;
}

const Shape kVideo{{Axis::B, 2}, {Axis::U, 4}, {Axis::C, 1}, {Axis::T, 4}, {Axis::H, 8}, {Axis::W, 8}};

}  // namespace

// Hand counts, one fixture layer per test.

TEST(Complexity, Kernel4DWithBias) {
  ComplexityReport r;
  CostRecorder rec(r);
  const Shape in{{Axis::C, 3}, {Axis::U, 3}, {Axis::T, 3}, {Axis::H, 3}, {Axis::W, 3}};
  rec.conv("k", ConvGeometry::make(in, kernel_shape(2, 3, 2, 2, 2, 2), ConvOptions::valid()), true);
  const auto c = only_row(r);
  EXPECT_EQ(c.params, 3u * 2 * 16 + 2);  // 98
  EXPECT_EQ(c.macs, oracle::conv_macs(2 * 2 * 2 * 2, 16, 3, 2));
  EXPECT_EQ(c.flops, 2 * c.macs);
}

TEST(Complexity, PointwiseConvSixteenMacs) {
  ComplexityReport r;
  CostRecorder rec(r);
  const Shape in{{Axis::C, 1}, {Axis::U, 2}, {Axis::T, 2}, {Axis::H, 2}, {Axis::W, 2}};
  rec.conv("p", ConvGeometry::make(in, kernel_shape(1, 1, 1, 1, 1, 1), {}), false);
  const auto c = only_row(r);
  EXPECT_EQ(c.macs, 16u);
  EXPECT_EQ(c.flops, 32u);
  EXPECT_EQ(c.params, 1u);
}

TEST(Complexity, ParamMatchedFactorizedPair) {
  ParameterStore<float> store;
  Initializer init(0, /*hollow=*/true);
  BlockConfig cfg;
  cfg.channels = 64;
  cfg.kernel = {4, 3, 3, 3};
  cfg.attention = AttentionSwitches::none();
  cfg.batch_norm = false;
  F4DBlock<float> blk(store, "b", cfg, init);
  EXPECT_EQ(store.element_count(), 441792u + 241u);
}

TEST(Complexity, DenseLayer) {
  ComplexityReport r;
  CostRecorder rec(r);
  rec.dense("fc", 5, 7, 3, true);
  const auto c = only_row(r);
  EXPECT_EQ(c.params, 7u * 3 + 3);
  EXPECT_EQ(c.macs, 5u * 7 * 3);
  EXPECT_EQ(c.flops, 210u);
}

TEST(Complexity, BatchNormAndActivations) {
  ComplexityReport r;
  CostRecorder rec(r);
  const Shape s{{Axis::B, 2}, {Axis::C, 3}, {Axis::T, 4}};
  rec.batch_norm("bn", s);
  rec.relu("relu", s);
  rec.sigmoid("sig", s);
  EXPECT_EQ(r.rows[0].params, 6u);
  EXPECT_EQ(r.rows[0].flops, 48u);
  EXPECT_EQ(r.rows[1].flops, 24u);
  EXPECT_EQ(r.rows[2].flops, 48u);
  EXPECT_EQ(r.totals().nonlinearities, 2u);
}

TEST(Complexity, ChannelAttentionByHand) {
  ParameterStore<float> store;
  Initializer init(0, true);
  ChannelAttention<float> ca(store, "ca", 8, 4, init);
  ComplexityReport r;
  CostRecorder rec(r);
  const Shape s{{Axis::B, 2}, {Axis::C, 8}, {Axis::T, 3}, {Axis::H, 4}, {Axis::W, 4}};
  ca.cost(rec, s);
  const auto t = r.totals();
  const std::uint64_t n = s.numel(), hidden = 2, rows = 2;
  EXPECT_EQ(t.params, 8 * hidden + hidden * 8);  // MLP shared by both branches
  EXPECT_EQ(t.macs, 2 * rows * (8 * hidden + hidden * 8));
  // pools 2n, MLP 2*macs, relu 2*rows*hidden, branch sum + sigmoid(2) on rows*8, scale + residual 2n
  EXPECT_EQ(t.flops, 2 * n + 2 * t.macs + 2 * rows * hidden + rows * 8 + 2 * rows * 8 + 2 * n);
}

TEST(Complexity, EmptyModelIsZero) {
  ComplexityReport r;
  EXPECT_EQ(r.totals(), (LayerCost{"total", "total"}));
}

TEST(Complexity, DoublingHeightDoublesConvMacs) {
  // Temporal attention convolves an H-pooled descriptor, so it is excluded.
  auto spatial_macs = [](const ComplexityReport& r) {
    std::map<std::string, std::uint64_t> m;
    for (const auto& row : r.rows)
      if (row.kind == "conv" && row.name.find(".ta.") == std::string::npos) m[row.name] = row.macs;
    return m;
  };
  Backbone<float> m(small_plan(), 0, true);
  auto a = spatial_macs(m.complexity(kVideo));
  auto b = spatial_macs(m.complexity(kVideo.with_extent(Axis::H, 16)));
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, macs] : a) EXPECT_EQ(2 * macs, b.at(name)) << name;
}

TEST(Complexity, FactorizedBlockFlopsWithinFloorGap) {
  for (std::size_t ch : {8u, 16u, 64u}) {
    const Shape in{{Axis::B, 8}, {Axis::C, ch}, {Axis::T, 4}, {Axis::H, 6}, {Axis::W, 6}};
    std::uint64_t macs[2];
    for (int k = 0; k < 2; ++k) {
      ParameterStore<float> store;
      Initializer init(0, true);
      BlockConfig cfg;
      cfg.channels = ch;
      cfg.conv = k ? ConvKind::Factorized : ConvKind::Full4D;
      F4DBlock<float> blk(store, "b", cfg, init);
      ComplexityReport r;
      CostRecorder rec(r);
      blk.cost(rec, in);
      macs[k] = conv_macs(r);
    }
    const auto wm = width_match(3, 3, 3, 3, ch, ch);
    const std::uint64_t sites = 2 * 4 * 4 * 6 * 6;  // (B/U) * U * T * H * W
    // the attention convs are identical in both variants and cancel
    EXPECT_LE(macs[1], macs[0]);
    EXPECT_LT(macs[0] - macs[1], sites * wm.denominator);
  }
}

TEST(Complexity, ParamsMatchStoreCount) {
  for (auto kind : {ConvKind::Factorized, ConvKind::Full4D}) {
    auto plan = small_plan();
    plan.block.conv = kind;
    Backbone<float> m(plan, 3);
    EXPECT_EQ(m.complexity(kVideo).totals().params, m.store().element_count());
  }
}

TEST(Backbone, InsertionControlsBlockCount) {
  auto plan = BackbonePlan::mini();
  EXPECT_EQ(Backbone<float>(plan, 0, true).block_count(), 0u);
  plan.insertion = {"conv2", "conv3", "conv4", "conv5"};
  EXPECT_EQ(Backbone<float>(plan, 0, true).block_count(), 4u);
  plan.insertion = {"conv9"};
  EXPECT_THROW(Backbone<float>(plan, 0, true), std::invalid_argument);
}

TEST(Backbone, InsertionDoesNotChangeStemAndStageParams) {
  auto a = BackbonePlan::mini(), b = BackbonePlan::mini();
  b.insertion = {"conv3", "conv5"};
  Backbone<float> ma(a, 1, true), mb(b, 2, true);
  std::map<std::string, std::size_t> pa;
  for (auto* p : ma.store().parameters()) pa[p->name] = p->value.shape().numel();
  for (auto* p : mb.store().parameters())
    if (p->name.find(".f4d.") == std::string::npos) {
      EXPECT_EQ(pa.at(p->name), p->value.shape().numel()) << p->name;
    }
}

TEST(Backbone, ParamCountIsSeedInvariant) {
  auto plan = small_plan();
  EXPECT_EQ(Backbone<float>(plan, 1).store().element_count(), Backbone<float>(plan, 999).store().element_count());
}

TEST(Backbone, ForwardShapeAndDeterminism) {
  auto plan = small_plan();
  Backbone<double> m1(plan, 5), m2(plan, 5);
  auto x = normal(kVideo, 6);
  Graph<double> g1, g2;
  auto y1 = g1.value(m1(g1, g1.constant(x)));
  auto y2 = g2.value(m2(g2, g2.constant(x)));
  EXPECT_EQ(y1.shape(), (Shape{{Axis::B, 2}, {Axis::C, 2}}));
  EXPECT_EQ(y1, y2);
}

TEST(Backbone, CountingOnlyRefusesForward) {
  Backbone<float> m(small_plan(), 0, true);
  Graph<float> g;
  EXPECT_THROW(m(g, g.constant(Tensor<float>(kVideo))), std::logic_error);
}

TEST(Backbone, Resnet50ShapedPlanCountsWithoutStorage) {
  auto plan = BackbonePlan::resnet50_shaped();
  Backbone<float> m(plan, 0, true);
  EXPECT_EQ(m.block_count(), 4u);
  const Shape v{{Axis::B, 1}, {Axis::U, 4}, {Axis::C, 3}, {Axis::T, 8}, {Axis::H, 224}, {Axis::W, 224}};
  auto r = m.complexity(v);
  EXPECT_EQ(r.totals().params, m.store().element_count());
  EXPECT_GT(r.totals().params, 100'000'000u);
}
