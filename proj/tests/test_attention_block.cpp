#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace f4d;
using testutil::normal;
using testutil::vec;

namespace {

const Shape kTaShape{{Axis::C, 4}, {Axis::U, 2}, {Axis::T, 3}, {Axis::H, 5}, {Axis::W, 5}};
const Shape kCaShape{{Axis::B, 2}, {Axis::C, 8}, {Axis::T, 3}, {Axis::H, 4}, {Axis::W, 4}};
const Shape kStaShape{{Axis::B, 2}, {Axis::C, 4}, {Axis::T, 3}, {Axis::H, 6}, {Axis::W, 6}};

template <typename M>
AttentionResult run(const M& m, Graph<double>& g, const Tensor<double>& x) {
  return m.apply(g, g.constant(x));
}

void expect_open_unit_interval(const Tensor<double>& m) {
  for (double v : m.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

Tensor<double> times(const Tensor<double>& x, double s) {
  return map(x, [s](double v) { return v * s; });
}

}  // namespace

TEST(TemporalAttention, ZeroParamsPassThroughOneAndAHalf) {
  ParameterStore<double> store;
  Initializer init(1);
  TemporalAttention<double> ta(store, "ta", init);
  testutil::zero_all(store);
  auto x = normal(kTaShape, 2);
  Graph<double> g;
  auto r = run(ta, g, x);
  EXPECT_EQ(g.value(r.out), times(x, 1.5));
  EXPECT_EQ(g.value(r.map).shape(), (Shape{{Axis::C, 1}, {Axis::U, 2}, {Axis::T, 3}, {Axis::H, 1}, {Axis::W, 1}}));
}

TEST(TemporalAttention, MatchesScalarLoop) {
  for (const auto& shape : {kTaShape, Shape{{Axis::B, 2}, {Axis::C, 3}, {Axis::U, 3}, {Axis::T, 2}, {Axis::H, 3},
                                            {Axis::W, 4}}}) {
    ParameterStore<double> store;
    Initializer init(3);
    TemporalAttention<double> ta(store, "ta", init);
    testutil::randomize(store, 4);
    auto x = normal(shape, 5);
    Graph<double> g;
    auto r = run(ta, g, x);
    EXPECT_EQ(g.value(r.out).shape(), shape);
    expect_open_unit_interval(g.value(r.map));
    oracle::Arr6 m;
    auto ref = oracle::temporal_attention(oracle::lift(x), testutil::dilated(ta.conv()), &m);
    EXPECT_LE(oracle::max_rel(vec(g.value(r.out)), ref.v), 1e-10);
    EXPECT_LE(oracle::max_rel(vec(g.value(r.map)), m.v), 1e-10);
  }
}

TEST(ChannelAttention, ZeroParamsPassThroughOneAndAHalf) {
  ParameterStore<double> store;
  Initializer init(6);
  ChannelAttention<double> ca(store, "ca", 8, 16, init);
  EXPECT_EQ(ca.hidden(), 1u);
  testutil::zero_all(store);
  auto x = normal(kCaShape, 7);
  Graph<double> g;
  EXPECT_EQ(g.value(run(ca, g, x).out), times(x, 1.5));
}

TEST(ChannelAttention, MatchesScalarLoop) {
  for (std::size_t r : {16u, 2u}) {
    ParameterStore<double> store;
    Initializer init(8);
    ChannelAttention<double> ca(store, "ca", 8, r, init);
    testutil::randomize(store, 9);
    auto x = normal(kCaShape, 10);
    Graph<double> g;
    auto res = run(ca, g, x);
    expect_open_unit_interval(g.value(res.map));
    auto ref = oracle::channel_attention(oracle::lift(x), vec(ca.squeeze().weight->value),
                                         vec(ca.expand().weight->value), ca.hidden());
    EXPECT_LE(oracle::max_rel(vec(g.value(res.out)), ref.v), 1e-10);
  }
}

TEST(ChannelAttention, ConstantChannelsPoolDegenerately) {
  ParameterStore<double> store;
  Initializer init(11);
  ChannelAttention<double> ca(store, "ca", 4, 2, init);
  testutil::randomize(store, 12);
  Tensor<double> x(Shape{{Axis::B, 1}, {Axis::C, 4}, {Axis::T, 2}, {Axis::H, 2}, {Axis::W, 2}});
  const std::vector<double> level{0.3, -1.2, 2.0, 0.7};
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 8; ++i) x[c * 8 + i] = level[c];
  Graph<double> g;
  auto m = g.value(run(ca, g, x).map);
  const auto& w0 = ca.squeeze().weight->value;
  const auto& w1 = ca.expand().weight->value;
  for (std::size_t c = 0; c < 4; ++c) {
    double z = 0;
    for (std::size_t j = 0; j < 2; ++j) {
      double h = 0;
      for (std::size_t k = 0; k < 4; ++k) h += w0[j * 4 + k] * level[k];
      z += w1[c * 2 + j] * std::max(0.0, h);
    }
    EXPECT_NEAR(m[c], oracle::sigmoid(2 * z), 1e-14);
  }
}

TEST(SpatioTemporalAttention, ZeroParamsPassThroughOneAndAHalf) {
  ParameterStore<double> store;
  Initializer init(13);
  SpatioTemporalAttention<double> sta(store, "sta", init);
  testutil::zero_all(store);
  auto x = normal(kStaShape, 14);
  Graph<double> g;
  EXPECT_EQ(g.value(run(sta, g, x).out), times(x, 1.5));
}

TEST(SpatioTemporalAttention, MatchesScalarLoop) {
  ParameterStore<double> store;
  Initializer init(15);
  SpatioTemporalAttention<double> sta(store, "sta", init);
  testutil::randomize(store, 16);
  auto x = normal(kStaShape, 17);
  Graph<double> g;
  auto r = run(sta, g, x);
  EXPECT_EQ(g.value(r.out).shape(), kStaShape);
  EXPECT_EQ(g.value(r.map).shape(), (Shape{{Axis::B, 2}, {Axis::C, 1}, {Axis::T, 3}, {Axis::H, 6}, {Axis::W, 6}}));
  expect_open_unit_interval(g.value(r.map));
  auto ref = oracle::spatiotemporal_attention(oracle::lift(x), testutil::dilated(sta.spatial()),
                                              testutil::dilated(sta.temporal()));
  EXPECT_LE(oracle::max_rel(vec(g.value(r.out)), ref.v), 1e-10);
}

TEST(SpatioTemporalAttention, ShapePreservedForSmallExtents) {
  ParameterStore<double> store;
  Initializer init(18);
  SpatioTemporalAttention<double> sta(store, "sta", init);
  for (auto [t, h, w] : {std::tuple{1u, 1u, 1u}, std::tuple{2u, 3u, 7u}, std::tuple{5u, 2u, 2u}}) {
    const Shape s{{Axis::B, 1}, {Axis::C, 3}, {Axis::T, t}, {Axis::H, h}, {Axis::W, w}};
    Graph<double> g;
    EXPECT_EQ(g.value(run(sta, g, normal(s, 19)).out).shape(), s);
  }
}

// ---------------------------------------------------------------------------
// Block

namespace {

BlockConfig tiny_block(ConvKind kind) {
  BlockConfig c;
  c.channels = 4;
  c.units = 2;
  c.conv = kind;
  c.reduction = 2;
  return c;
}

const Shape kBlockIn{{Axis::B, 4}, {Axis::C, 4}, {Axis::T, 3}, {Axis::H, 5}, {Axis::W, 5}};

oracle::Vec state_vec(const ParameterStore<double>& store, const std::string& name) {
  for (const auto& [n, t] : store.buffers())
    if (n == name) return vec(*t);
  throw std::runtime_error("no buffer " + name);
}

/// Eval-mode block composed from the scalar sub-oracles.
oracle::Arr6 block_oracle(const F4DBlock<double>& blk, const ParameterStore<double>& store, const Tensor<double>& x) {
  const auto& cfg = blk.config();
  const auto x6 = oracle::lift(x);
  auto y = oracle::to_units(x6, cfg.units);
  if (cfg.conv == ConvKind::Full4D) {
    y = oracle::conv4d(y, oracle::lift_kernel(blk.full_conv().weight->value), vec(blk.full_conv().bias->value));
  } else {
    y = oracle::conv4d(y, oracle::lift_kernel(blk.spatial_conv().weight->value),
                       vec(blk.spatial_conv().bias->value));
    if (cfg.mid_activation == MidActivation::Relu)
      for (auto& v : y.v) v = oracle::relu(v);
    y = oracle::conv4d(y, oracle::lift_kernel(blk.temporal_conv().weight->value),
                       vec(blk.temporal_conv().bias->value));
  }
  if (cfg.attention.temporal) y = oracle::temporal_attention(y, testutil::dilated(blk.temporal_attention().conv()));
  y = oracle::from_units(y);
  if (cfg.batch_norm) {
    const auto& bn = blk.batch_norm();
    y = oracle::batch_norm_eval(y, state_vec(store, bn.name + ".running_mean"),
                                state_vec(store, bn.name + ".running_var"), vec(bn.gamma->value),
                                vec(bn.beta->value), cfg.bn.eps);
  }
  for (auto& v : y.v) v = oracle::relu(v);
  if (cfg.attention.channel) {
    const auto& ca = blk.channel_attention();
    y = oracle::channel_attention(y, vec(ca.squeeze().weight->value), vec(ca.expand().weight->value), ca.hidden());
  }
  if (cfg.attention.spatiotemporal)
    y = oracle::spatiotemporal_attention(y, testutil::dilated(blk.spatiotemporal_attention().spatial()),
                                         testutil::dilated(blk.spatiotemporal_attention().temporal()));
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x6.v[i];
  return y;
}

void randomize_buffers(ParameterStore<double>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.2, 1.5);
  for (auto& [n, t] : store.buffers())
    for (auto& v : t->mutable_data()) v = n.ends_with("var") ? d(rng) : d(rng) - 0.8;
}

}  // namespace

TEST(F4DBlock, ZeroedBranchIsIdentityBitExact) {
  for (auto kind : {ConvKind::Factorized, ConvKind::Full4D}) {
    ParameterStore<double> store;
    Initializer init(20);
    F4DBlock<double> blk(store, "blk", tiny_block(kind), init);
    testutil::zero_all(store);
    auto x = normal(kBlockIn, 21);
    Graph<double> g(Mode::Eval);
    EXPECT_EQ(g.value(blk(g, g.constant(x))), x);
  }
}

TEST(F4DBlock, MatchesComposedOracle) {
  for (auto kind : {ConvKind::Factorized, ConvKind::Full4D}) {
    ParameterStore<double> store;
    Initializer init(22);
    F4DBlock<double> blk(store, "blk", tiny_block(kind), init);
    testutil::randomize(store, 23);
    randomize_buffers(store, 24);
    auto x = normal(kBlockIn, 25);
    Graph<double> g(Mode::Eval);
    auto y = g.value(blk(g, g.constant(x)));
    EXPECT_EQ(y.shape(), kBlockIn);
    EXPECT_LE(oracle::max_rel(vec(y), block_oracle(blk, store, x).v), 1e-10);
  }
}

TEST(F4DBlock, AttentionDisabledEqualsReducedPipeline) {
  auto cfg = tiny_block(ConvKind::Factorized);
  cfg.attention = AttentionSwitches::none();
  ParameterStore<double> store;
  Initializer init(26);
  F4DBlock<double> blk(store, "blk", cfg, init);
  testutil::randomize(store, 27);
  randomize_buffers(store, 28);
  EXPECT_EQ(store.find("blk.ta.conv.bias"), nullptr);
  auto x = normal(kBlockIn, 29);
  Graph<double> g(Mode::Eval);
  auto y = g.value(blk(g, g.constant(x)));
  EXPECT_LE(oracle::max_rel(vec(y), block_oracle(blk, store, x).v), 1e-10);
}

TEST(F4DBlock, TrainEqualsEvalWithoutDropoutAndBatchNorm) {
  auto cfg = tiny_block(ConvKind::Factorized);
  cfg.dropout = 0.0;
  cfg.batch_norm = false;
  ParameterStore<double> store;
  Initializer init(30);
  F4DBlock<double> blk(store, "blk", cfg, init);
  auto x = normal(kBlockIn, 31);
  Graph<double> ge(Mode::Eval), gt(Mode::Train, 99);
  EXPECT_EQ(ge.value(blk(ge, ge.constant(x))), gt.value(blk(gt, gt.constant(x))));
}

TEST(F4DBlock, RejectsWrongLayout) {
  ParameterStore<double> store;
  Initializer init(32);
  F4DBlock<double> blk(store, "blk", tiny_block(ConvKind::Factorized), init);
  Graph<double> g;
  EXPECT_THROW(blk(g, g.constant(normal(Shape{{Axis::B, 4}, {Axis::C, 3}, {Axis::T, 3}, {Axis::H, 5}, {Axis::W, 5}},
                                        33))),
               ShapeError);
  EXPECT_THROW(blk(g, g.constant(normal(Shape{{Axis::B, 3}, {Axis::C, 4}, {Axis::T, 3}, {Axis::H, 5}, {Axis::W, 5}},
                                        34))),
               ShapeError);
}

TEST(F4DBlock, FactorizedWidthIsParamMatched) {
  BlockConfig c;
  c.channels = 64;
  c.kernel = {4, 3, 3, 3};
  EXPECT_EQ(c.width(), 177u);
}
