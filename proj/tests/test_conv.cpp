#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace f4d;
using testutil::normal;
using testutil::vec;

namespace {

Kernel4D<double> random_kernel(std::size_t o, std::size_t c, std::size_t s, std::size_t p, std::size_t q,
                               std::size_t r, std::uint64_t seed, ConvOptions opt = {}) {
  return {normal(kernel_shape(o, c, s, p, q, r), seed), normal(bias_shape(o), seed + 1), opt};
}

}  // namespace

TEST(Conv4D, DeltaKernelIsIdentity) {
  auto x = normal(Shape{{Axis::C, 1}, {Axis::U, 2}, {Axis::T, 3}, {Axis::H, 4}, {Axis::W, 2}}, 1);
  Kernel4D<double> k{Tensor<double>(kernel_shape(1, 1, 1, 1, 1, 1), 1.0), Tensor<double>(bias_shape(1), 0.0), {}};
  EXPECT_EQ(conv4d_direct(x, k), x);
  EXPECT_EQ(conv4d_via_3d(x, k), x);
}

TEST(Conv4D, BiasOnlyGivesConstant) {
  auto x = normal(Shape{{Axis::C, 2}, {Axis::U, 3}, {Axis::T, 3}, {Axis::H, 3}, {Axis::W, 3}}, 2);
  Kernel4D<double> k{Tensor<double>(kernel_shape(3, 2, 3, 3, 3, 3), 0.0),
                     Tensor<double>(bias_shape(3), std::vector<double>{0.5, -1.0, 2.0}), {}};
  auto y = conv4d_via_3d(x, k);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 81; ++i) EXPECT_EQ(y[o * 81 + i], k.bias[o]);
}

TEST(Conv4D, ValidTwoByTwoMatchesScalarLoop) {
  auto x = normal(Shape{{Axis::C, 2}, {Axis::U, 3}, {Axis::T, 4}, {Axis::H, 5}, {Axis::W, 5}}, 3);
  auto k = random_kernel(2, 2, 2, 2, 2, 2, 4, ConvOptions::valid());
  auto y = conv4d_via_3d(x, k);
  EXPECT_EQ(y.shape(), (Shape{{Axis::C, 2}, {Axis::U, 2}, {Axis::T, 3}, {Axis::H, 4}, {Axis::W, 4}}));
  auto ref = oracle::conv4d(oracle::lift(x), oracle::lift_kernel(k.weight), vec(k.bias), {1, 1, 1, 1},
                            {false, false, false, false});
  EXPECT_LE(oracle::max_rel(vec(y), ref.v), 1e-13);
  EXPECT_LE(oracle::max_rel(vec(conv4d_direct(x, k)), ref.v), 1e-13);
}

TEST(Conv4D, SamePaddingDilatedMatchesScalarLoop) {
  ConvOptions opt;
  opt.dilation = {2, 1, 2, 1};
  auto x = normal(Shape{{Axis::B, 2}, {Axis::C, 3}, {Axis::U, 4}, {Axis::T, 3}, {Axis::H, 5}, {Axis::W, 4}}, 5);
  auto k = random_kernel(2, 3, 3, 2, 3, 2, 6, opt);
  auto ref = oracle::conv4d(oracle::lift(x), oracle::lift_kernel(k.weight), vec(k.bias), {2, 1, 2, 1});
  EXPECT_LE(oracle::max_rel(vec(conv4d_via_3d(x, k)), ref.v), 1e-13);
}

TEST(Conv4D, SingleSlabIsPlain3D) {
  auto x = normal(Shape{{Axis::C, 2}, {Axis::T, 4}, {Axis::H, 5}, {Axis::W, 5}}, 7);
  auto k = random_kernel(3, 2, 1, 3, 3, 3, 8);
  auto ref = oracle::conv4d(oracle::lift(x), oracle::lift_kernel(k.weight), vec(k.bias));
  auto y = conv4d_via_3d(x, k);
  EXPECT_EQ(y.shape(), (Shape{{Axis::C, 3}, {Axis::T, 4}, {Axis::H, 5}, {Axis::W, 5}}));
  EXPECT_LE(oracle::max_rel(vec(y), ref.v), 1e-13);
}

TEST(Conv4D, SamePaddingKeepsUnitExtent) {
  auto x = normal(Shape{{Axis::C, 1}, {Axis::U, 4}, {Axis::T, 2}, {Axis::H, 2}, {Axis::W, 2}}, 9);
  auto y = conv4d_via_3d(x, random_kernel(1, 1, 3, 1, 1, 1, 10));
  EXPECT_EQ(y.shape(), x.shape());
}

TEST(Conv4D, ShapeErrors) {
  auto x = normal(Shape{{Axis::C, 2}, {Axis::U, 2}, {Axis::T, 2}, {Axis::H, 2}, {Axis::W, 2}}, 11);
  EXPECT_THROW(conv4d_via_3d(x, random_kernel(1, 3, 1, 1, 1, 1, 12)), ShapeError);
  EXPECT_THROW(conv4d_via_3d(x, random_kernel(1, 2, 3, 1, 1, 1, 13, ConvOptions::valid())), ShapeError);
}

TEST(Conv4D, EquivalenceSuite) {
  EquivOptions o;
  auto trials = run_equivalence(o);
  ASSERT_EQ(trials.size(), o.trials + o.separable_trials);
  std::set<std::string> pads;
  for (const auto& t : trials) {
    EXPECT_TRUE(t.pass) << t.suite << " " << t.index << " " << t.rel_error;
    pads.insert(t.padding);
  }
  EXPECT_EQ(pads, (std::set<std::string>{"same", "valid"}));
}

TEST(Conv4D, CorruptedSlabIsCaught) {
  EquivOptions o;
  o.trials = 3;
  o.separable_trials = 0;
  o.corrupt_trial = 1;
  auto trials = run_equivalence(o);
  EXPECT_TRUE(trials[0].pass);
  EXPECT_FALSE(trials[1].pass);
  EXPECT_TRUE(trials[2].pass);
}

TEST(MatchWidth, WorkedValues) {
  auto m = width_match(4, 3, 3, 3, 64, 64);
  EXPECT_EQ(m.numerator, 442368u);
  EXPECT_EQ(m.denominator, 2496u);
  EXPECT_EQ(m.width, 177u);
  EXPECT_EQ(match_width(3, 3, 3, 3, 16, 16), 43u);
  EXPECT_EQ(match_width(1, 1, 1, 1, 1, 1), 1u);
}

TEST(MatchWidth, FloorGapBoundOnRandomConfigs) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> k(1, 5), ch(8, 256);
  for (int i = 0; i < 200; ++i) {
    const auto u = k(rng), t = k(rng), h = k(rng), w = k(rng), np = ch(rng), no = ch(rng);
    auto m = width_match(u, t, h, w, np, no);
    ASSERT_GE(m.width, 1u);
    EXPECT_LE(m.factorized_weights(), m.full_weights());
    EXPECT_LT(m.full_weights() - m.factorized_weights(), m.denominator);
  }
}

TEST(Factorized, SeparableKernelMatchesFull) {
  // W[o,c,s,p,q,r] = A[o,c,s,q,r] * B[p] with one intermediate channel per
  // output: spatial O=N_out carries A, temporal is diagonal with B.
  const std::size_t C = 3, N = 2, S = 2, P = 3, Q = 2, R = 3;
  auto A = normal(Shape{{Axis::O, N}, {Axis::C, C}, {Axis::U, S}, {Axis::T, 1}, {Axis::H, Q}, {Axis::W, R}}, 20);
  auto Bt = normal(Shape{{Axis::T, P}}, 21);
  Tensor<double> full(kernel_shape(N, C, S, P, Q, R));
  for (std::size_t o = 0; o < N; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t p = 0; p < P; ++p)
          for (std::size_t q = 0; q < Q; ++q)
            for (std::size_t r = 0; r < R; ++r) full.at({o, c, s, p, q, r}) = A.at({o, c, s, 0, q, r}) * Bt[p];
  Tensor<double> tw(kernel_shape(N, N, 1, P, 1, 1), 0.0);
  for (std::size_t o = 0; o < N; ++o)
    for (std::size_t p = 0; p < P; ++p) tw.at({o, o, 0, p, 0, 0}) = Bt[p];
  auto bias = normal(bias_shape(N), 22);
  for (auto opt : {ConvOptions::same(), ConvOptions::valid()}) {
    FactorizedKernel<double> fk{A, Tensor<double>(bias_shape(N), 0.0), tw, bias, opt};
    auto x = normal(Shape{{Axis::B, 2}, {Axis::C, C}, {Axis::U, 3}, {Axis::T, 5}, {Axis::H, 4}, {Axis::W, 5}}, 23);
    auto ref = conv4d_direct(x, Kernel4D<double>{full, bias, opt});
    EXPECT_LE(max_rel_error(conv_factorized(x, fk, MidActivation::None), ref), 1e-12);
  }
}

TEST(Factorized, ReluInertOnNonNegativeIntermediate) {
  auto abs_normal = [](Shape s, std::uint64_t seed) {
    return map(normal(std::move(s), seed), [](double v) { return std::abs(v); });
  };
  FactorizedKernel<double> fk{abs_normal(kernel_shape(4, 2, 3, 1, 3, 3), 30), abs_normal(bias_shape(4), 31),
                              normal(kernel_shape(2, 4, 1, 3, 1, 1), 32), normal(bias_shape(2), 33), {}};
  auto x = abs_normal(Shape{{Axis::C, 2}, {Axis::U, 3}, {Axis::T, 4}, {Axis::H, 4}, {Axis::W, 4}}, 34);
  EXPECT_EQ(conv_factorized(x, fk, MidActivation::Relu), conv_factorized(x, fk, MidActivation::None));
}

TEST(Factorized, ParamMatchedPairWithinFloorGap) {
  const auto m = width_match(4, 3, 3, 3, 64, 64);
  const std::size_t full = 64 * 64 * 4 * 3 * 3 * 3 + 64;
  const std::size_t fact = 177 * 64 * 4 * 1 * 3 * 3 + 177 + 64 * 177 * 3 + 64;
  EXPECT_EQ(fact, 441792u + 241u);
  EXPECT_LE(fact, full);
  EXPECT_LT(m.full_weights() - m.factorized_weights(), m.denominator);
}

TEST(Dilated, ZeroWeightsGiveZero) {
  DilatedConvSpec spec;
  DilatedConvWeights<double> w{{Tensor<double>(spec.path_weight_shape(), 0.0),
                                Tensor<double>(spec.path_weight_shape(), 0.0)},
                               Tensor<double>(bias_shape(1), 0.0)};
  auto x = normal(Shape{{Axis::C, 1}, {Axis::T, 8}}, 40);
  EXPECT_EQ(conv_dilated(x, spec, w), Tensor<double>(x.shape(), 0.0));
}

TEST(Dilated, SinglePathDeltaIsIdentity) {
  DilatedConvSpec spec;
  spec.dilations = {1};
  spec.extent = 1;
  DilatedConvWeights<double> w{{Tensor<double>(spec.path_weight_shape(), 1.0)}, Tensor<double>(bias_shape(1), 0.0)};
  auto x = normal(Shape{{Axis::C, 1}, {Axis::T, 8}}, 41);
  EXPECT_EQ(conv_dilated(x, spec, w), x);
}

TEST(Dilated, ImpulseResponseTwoPaths) {
  DilatedConvSpec spec;  // dilations {2, 3}, extent 3
  Tensor<double> p0(spec.path_weight_shape(), std::vector<double>{1.0, 2.0, 3.0});
  Tensor<double> p1(spec.path_weight_shape(), std::vector<double>{10.0, 20.0, 30.0});
  DilatedConvWeights<double> w{{p0, p1}, Tensor<double>(bias_shape(1), 0.0)};
  Tensor<double> x(Shape{{Axis::C, 1}, {Axis::T, 8}}, 0.0);
  x[4] = 1.0;
  auto y = conv_dilated(x, spec, w);
  // y[i] = sum_k w[k] x[i + (k-1) d]: the impulse at 4 reaches i = 4 - (k-1) d
  const std::vector<double> expect{0, 30, 3, 0, 22, 0, 1, 10};
  EXPECT_EQ(y.values(), expect);
}

TEST(Dilated, TwoDimensionalImpulse) {
  DilatedConvSpec spec;
  spec.rank = DilatedRank::Spatial2D;
  spec.dilations = {2};
  Tensor<double> p(spec.path_weight_shape(), 0.0);
  p[0] = 1.0;  // tap (q=0, r=0)
  p[8] = 5.0;  // tap (q=2, r=2)
  DilatedConvWeights<double> w{{p}, Tensor<double>(bias_shape(1), 0.0)};
  Tensor<double> x(Shape{{Axis::C, 1}, {Axis::H, 7}, {Axis::W, 7}}, 0.0);
  x.at({0, 3, 3}) = 1.0;
  auto y = conv_dilated(x, spec, w);
  EXPECT_EQ(y.at({0, 5, 5}), 1.0);
  EXPECT_EQ(y.at({0, 1, 1}), 5.0);
  double total = 0;
  for (double v : y.values()) total += v;
  EXPECT_EQ(total, 6.0);
}
