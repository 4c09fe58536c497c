#pragma once

// Self-checking suites driven by the CLI and the acceptance binary:
//   conv equivalence  stacked-3D 4D conv vs the literal nested sum, and a
//                     rank-separable 4D kernel vs its (3+1)D pair
//   gradient probes   one probe per registered differentiable op plus the
//                     composite layers and the full block

#include <functional>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "f4d/f4d_block.hpp"
#include "f4d/gradcheck.hpp"

namespace f4d {

// ---------------------------------------------------------------------------
// Conv equivalence

struct EquivOptions {
  std::size_t trials = 20;
  std::size_t separable_trials = 10;
  std::uint64_t seed = 7;
  double tolerance = 1e-6;
  std::size_t max_channels = 4;
  std::size_t max_units = 4;
  std::size_t max_time = 5;
  std::size_t max_space = 6;
  std::size_t max_kernel = 3;
  /// Debug negative control: add 1 to the U-offset-0 slab of this trial's
  /// kernel on the stacked-3D side only.
  std::optional<std::size_t> corrupt_trial;
};

struct EquivTrial {
  std::string suite;  // "conv4d" or "separable"
  std::size_t index = 0;
  std::string padding;
  std::string input_shape;
  std::string kernel_shape;
  double rel_error = 0.0;
  bool pass = false;
};

namespace detail {

template <typename T>
Tensor<T> random_normal(const Shape& s, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor<T> t(s);
  for (auto& v : t.mutable_data()) v = static_cast<T>(d(rng));
  return t;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace detail

inline EquivTrial conv4d_equivalence_trial(std::size_t index, std::mt19937_64& rng, const EquivOptions& o,
                                           Padding padding, bool corrupt) {
  const std::size_t b = detail::pick(rng, 1, 2), c = detail::pick(rng, 1, o.max_channels),
                    n = detail::pick(rng, 1, o.max_channels);
  std::array<std::size_t, 4> in{detail::pick(rng, 1, o.max_units), detail::pick(rng, 1, o.max_time),
                                detail::pick(rng, 1, o.max_space), detail::pick(rng, 1, o.max_space)};
  std::array<std::size_t, 4> k{}, dil{1, 1, 1, 1};
  for (std::size_t a = 0; a < 4; ++a) {
    const std::size_t cap = padding == Padding::Valid ? std::min(o.max_kernel, in[a]) : o.max_kernel;
    k[a] = detail::pick(rng, 1, cap);
    // Dilation 2 where it still fits a valid window.
    if (k[a] > 1 && detail::pick(rng, 0, 2) == 0 && (padding == Padding::Same || 2 * (k[a] - 1) + 1 <= in[a]))
      dil[a] = 2;
  }
  ConvOptions opt;
  opt.padding.fill(padding);
  opt.dilation = dil;
  const Shape xs{{Axis::B, b}, {Axis::C, c}, {Axis::U, in[0]}, {Axis::T, in[1]}, {Axis::H, in[2]}, {Axis::W, in[3]}};
  const auto x = detail::random_normal<double>(xs, rng);
  Kernel4D<double> kern{detail::random_normal<double>(kernel_shape(n, c, k[0], k[1], k[2], k[3]), rng),
                        detail::random_normal<double>(bias_shape(n), rng), opt};
  const auto ref = conv4d_direct(x, kern);
  if (corrupt) {
    auto w = kern.weight.mutable_data();
    const std::size_t slab = k[1] * k[2] * k[3];
    for (std::size_t oc = 0; oc < n * c; ++oc)
      for (std::size_t i = 0; i < slab; ++i) w[oc * k[0] * slab + i] += 1.0;
  }
  const auto got = conv4d_via_3d(x, kern);
  EquivTrial t{"conv4d", index, padding == Padding::Same ? "same" : "valid", xs.str(), kern.weight.shape().str()};
  t.rel_error = max_rel_error(got, ref);
  t.pass = t.rel_error <= o.tolerance;
  return t;
}

/// 4D kernel W[j,c,s,p,q,r] = sum_m B[j,m,p] A[m,c,s,q,r]. With a zero
/// spatial bias the full conv (bias = temporal bias) equals the pair.
inline EquivTrial separable_equivalence_trial(std::size_t index, std::mt19937_64& rng, const EquivOptions& o,
                                              Padding padding) {
  const std::size_t b = detail::pick(rng, 1, 2), c = detail::pick(rng, 1, o.max_channels),
                    n = detail::pick(rng, 1, o.max_channels), m = detail::pick(rng, 1, 3);
  std::array<std::size_t, 4> in{detail::pick(rng, 1, o.max_units), detail::pick(rng, 1, o.max_time),
                                detail::pick(rng, 1, o.max_space), detail::pick(rng, 1, o.max_space)};
  std::array<std::size_t, 4> k{};
  for (std::size_t a = 0; a < 4; ++a)
    k[a] = detail::pick(rng, 1, padding == Padding::Valid ? std::min(o.max_kernel, in[a]) : o.max_kernel);
  ConvOptions opt;
  opt.padding.fill(padding);
  const Shape xs{{Axis::B, b}, {Axis::C, c}, {Axis::U, in[0]}, {Axis::T, in[1]}, {Axis::H, in[2]}, {Axis::W, in[3]}};
  const auto x = detail::random_normal<double>(xs, rng);

  FactorizedKernel<double> fk;
  fk.spatial_weight = detail::random_normal<double>(kernel_shape(m, c, k[0], 1, k[2], k[3]), rng);
  fk.spatial_bias = Tensor<double>(bias_shape(m));
  fk.temporal_weight = detail::random_normal<double>(kernel_shape(n, m, 1, k[1], 1, 1), rng);
  fk.temporal_bias = detail::random_normal<double>(bias_shape(n), rng);
  fk.options = opt;

  Kernel4D<double> full{Tensor<double>(kernel_shape(n, c, k[0], k[1], k[2], k[3])), fk.temporal_bias, opt};
  auto w = full.weight.mutable_data();
  auto A = fk.spatial_weight.data();
  auto B = fk.temporal_weight.data();
  std::size_t i = 0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t s = 0; s < k[0]; ++s)
        for (std::size_t p = 0; p < k[1]; ++p)
          for (std::size_t q = 0; q < k[2]; ++q)
            for (std::size_t r = 0; r < k[3]; ++r, ++i) {
              double acc = 0;
              for (std::size_t mm = 0; mm < m; ++mm)
                acc += B[(j * m + mm) * k[1] + p] * A[(((mm * c + ci) * k[0] + s) * k[2] + q) * k[3] + r];
              w[i] = acc;
            }
  const auto got = conv_factorized(x, fk, MidActivation::None);
  const auto ref = conv4d_direct(x, full);
  EquivTrial t{"separable", index, padding == Padding::Same ? "same" : "valid", xs.str(), full.weight.shape().str()};
  t.rel_error = max_rel_error(got, ref);
  t.pass = t.rel_error <= o.tolerance;
  return t;
}

/// Padding alternates same/valid across trials.
inline std::vector<EquivTrial> run_equivalence(const EquivOptions& o) {
  std::vector<EquivTrial> out;
  std::mt19937_64 rng(o.seed);
  for (std::size_t i = 0; i < o.trials; ++i)
    out.push_back(conv4d_equivalence_trial(i, rng, o, i % 2 ? Padding::Valid : Padding::Same,
                                           o.corrupt_trial && *o.corrupt_trial == i));
  for (std::size_t i = 0; i < o.separable_trials; ++i)
    out.push_back(separable_equivalence_trial(i, rng, o, i % 2 ? Padding::Valid : Padding::Same));
  return out;
}

// ---------------------------------------------------------------------------
// Gradient probes

/// Owns the parameters of one probe and the closure under test.
class ProbeBench {
 public:
  explicit ProbeBench(std::uint64_t seed) : rng_(seed), init_(seed ^ 0x5bd1e995ULL) {}

  ParameterStore<double>& store() { return store_; }
  Initializer& init() { return init_; }
  std::mt19937_64& rng() { return rng_; }

  Parameter<double>& tensor(const std::string& name, const Shape& s) {
    return store_.add(name, detail::random_normal<double>(s, rng_));
  }

  /// Scalar loss <y, R> with R fixed on first use, so every output
  /// coordinate contributes a distinct weight.
  Var project(Graph<double>& g, Var y) {
    const auto& s = g.value(y).shape();
    if (!projector_ || !(projector_->shape() == s))
      projector_ = std::make_unique<Tensor<double>>(detail::random_normal<double>(s, rng_));
    return ad::sum(g, ad::mul(g, y, g.constant(*projector_)));
  }

  std::function<Var(Graph<double>&)> fn;

 private:
  std::mt19937_64 rng_;
  Initializer init_;
  ParameterStore<double> store_;
  std::unique_ptr<Tensor<double>> projector_;
};

struct GradProbe {
  std::string name;
  /// Registry op this probe certifies; empty for composites.
  std::string op;
  Mode mode = Mode::Eval;
  std::function<void(ProbeBench&)> build;
};

struct GradProbeResult {
  std::string name;
  std::string op;
  std::uint64_t seed = 0;
  GradCheckResult check;
  std::set<std::string> ops_seen;
};

inline std::vector<GradProbe> gradient_probes() {
  using S = Shape;
  std::vector<GradProbe> v;
  auto unary = [&](std::string name, S shape, std::function<Var(Graph<double>&, Var)> op, Mode mode = Mode::Eval) {
    const std::string opname = name;
    v.push_back({name, opname, mode, [shape, op](ProbeBench& b) {
                   auto& x = b.tensor("x", shape);
                   b.fn = [&b, &x, op](Graph<double>& g) { return b.project(g, op(g, g.param(x))); };
                 }});
  };
  const S x4{{Axis::B, 2}, {Axis::C, 3}, {Axis::T, 4}};

  v.push_back({"add", "add", Mode::Eval, [x4](ProbeBench& b) {
                 auto& x = b.tensor("x", x4);
                 auto& y = b.tensor("y", x4);
                 b.fn = [&](Graph<double>& g) { return b.project(g, ad::add(g, g.param(x), g.param(y))); };
               }});
  unary("scale", x4, [](Graph<double>& g, Var x) { return ad::scale(g, x, 0.7); });
  v.push_back({"mul", "mul", Mode::Eval, [x4](ProbeBench& b) {
                 auto& x = b.tensor("x", x4);
                 auto& y = b.tensor("y", S{{Axis::B, 2}, {Axis::C, 1}, {Axis::T, 4}});
                 b.fn = [&](Graph<double>& g) { return b.project(g, ad::mul(g, g.param(x), g.param(y))); };
               }});
  unary("relu", x4, [](Graph<double>& g, Var x) { return ad::relu(g, x); });
  unary("sigmoid", x4, [](Graph<double>& g, Var x) { return ad::sigmoid(g, x); });
  const S img{{Axis::B, 2}, {Axis::C, 2}, {Axis::T, 2}, {Axis::H, 3}, {Axis::W, 3}};
  unary("reduce_mean", img, [](Graph<double>& g, Var x) { return ad::reduce_mean(g, x, {Axis::H, Axis::W}); });
  unary("reduce_max", img, [](Graph<double>& g, Var x) { return ad::reduce_max(g, x, {Axis::C, Axis::H}); });
  v.push_back({"concat", "concat", Mode::Eval, [](ProbeBench& b) {
                 auto& x = b.tensor("x", S{{Axis::B, 2}, {Axis::C, 2}, {Axis::T, 3}});
                 auto& y = b.tensor("y", S{{Axis::B, 2}, {Axis::C, 1}, {Axis::T, 3}});
                 b.fn = [&](Graph<double>& g) {
                   return b.project(g, ad::concat(g, g.param(x), g.param(y), Axis::C));
                 };
               }});
  const S four{{Axis::B, 2}, {Axis::C, 2}, {Axis::U, 3}, {Axis::T, 2}};
  unary("permute", four, [](Graph<double>& g, Var x) { return ad::permute(g, x, {Axis::U, Axis::C}); });
  unary("merge_unit", four, [](Graph<double>& g, Var x) { return ad::merge_unit(g, x); });
  unary("split_unit", S{{Axis::B, 6}, {Axis::C, 2}, {Axis::T, 2}},
        [](Graph<double>& g, Var x) { return ad::split_unit(g, x, 3); });
  unary("reshape", x4, [](Graph<double>& g, Var x) {
    return ad::reshape(g, x, S{{Axis::B, 2}, {Axis::C, 1}, {Axis::T, 12}});
  });
  v.push_back({"conv4d_via_3d", "conv4d_via_3d", Mode::Eval, [](ProbeBench& b) {
                 auto& x = b.tensor("x", S{{Axis::B, 1}, {Axis::C, 2}, {Axis::U, 3}, {Axis::T, 3}, {Axis::H, 3},
                                            {Axis::W, 3}});
                 auto& w = b.tensor("w", kernel_shape(2, 2, 2, 3, 2, 3));
                 auto& bias = b.tensor("b", bias_shape(2));
                 b.fn = [&](Graph<double>& g) {
                   ConvOptions o;
                   o.dilation = {1, 2, 1, 1};
                   return b.project(g, ad::conv(g, g.param(x), g.param(w), g.param(bias), o));
                 };
               }});
  v.push_back({"linear", "linear", Mode::Eval, [](ProbeBench& b) {
                 auto& x = b.tensor("x", S{{Axis::B, 3}, {Axis::C, 4}});
                 auto& w = b.tensor("w", S{{Axis::O, 2}, {Axis::C, 4}});
                 auto& bias = b.tensor("b", bias_shape(2));
                 b.fn = [&](Graph<double>& g) {
                   return b.project(g, ad::linear(g, g.param(x), g.param(w), g.param(bias)));
                 };
               }});
  auto bn_probe = [&](std::string name, std::string op, Mode mode) {
    v.push_back({name, op, mode, [](ProbeBench& b) {
                   auto& x = b.tensor("x", S{{Axis::B, 3}, {Axis::C, 2}, {Axis::T, 2}, {Axis::H, 2}});
                   auto& gamma = b.tensor("gamma", S{{Axis::C, 2}});
                   auto& beta = b.tensor("beta", S{{Axis::C, 2}});
                   auto& state = b.store().add_state("bn", 2);
                   state.running_mean = detail::random_normal<double>(S{{Axis::C, 2}}, b.rng());
                   state.running_var = map(detail::random_normal<double>(S{{Axis::C, 2}}, b.rng()),
                                           [](double a) { return 0.5 + a * a; });
                   b.fn = [&](Graph<double>& g) {
                     return b.project(g, ad::batch_norm(g, g.param(x), g.param(gamma), g.param(beta), state));
                   };
                 }});
  };
  bn_probe("batch_norm", "batch_norm", Mode::Eval);
  unary("dropout", x4, [](Graph<double>& g, Var x) { return ad::dropout(g, x, 0.5); });
  unary("avg_pool", S{{Axis::B, 2}, {Axis::C, 2}, {Axis::H, 4}, {Axis::W, 4}},
        [](Graph<double>& g, Var x) { return ad::avg_pool(g, x, 2); });
  v.push_back({"sum", "sum", Mode::Eval, [x4](ProbeBench& b) {
                 auto& x = b.tensor("x", x4);
                 b.fn = [&](Graph<double>& g) { return ad::sum(g, ad::sigmoid(g, g.param(x))); };
               }});
  v.push_back({"softmax_cross_entropy", "softmax_cross_entropy", Mode::Eval, [](ProbeBench& b) {
                 auto& z = b.tensor("logits", S{{Axis::B, 3}, {Axis::C, 4}});
                 b.fn = [&](Graph<double>& g) { return ad::softmax_cross_entropy(g, g.param(z), {0, 3, 1}); };
               }});

  // Training-mode variants of the mode-dependent ops.
  bn_probe("batch_norm_train", "", Mode::Train);
  unary("dropout_train", x4, [](Graph<double>& g, Var x) { return ad::dropout(g, x, 0.5); }, Mode::Train);
  v.back().op.clear();

  // Composites.
  v.push_back({"conv_factorized", "", Mode::Eval, [](ProbeBench& b) {
                 auto& x = b.tensor("x", S{{Axis::B, 1}, {Axis::C, 2}, {Axis::U, 3}, {Axis::T, 3}, {Axis::H, 3},
                                            {Axis::W, 3}});
                 BlockConfig cfg;
                 cfg.channels = 2;
                 cfg.units = 3;
                 cfg.attention = AttentionSwitches::none();
                 const auto m = cfg.width();
                 auto& sw = b.tensor("spatial.w", kernel_shape(m, 2, 3, 1, 3, 3));
                 auto& sb = b.tensor("spatial.b", bias_shape(m));
                 auto& tw = b.tensor("temporal.w", kernel_shape(2, m, 1, 3, 1, 1));
                 auto& tb = b.tensor("temporal.b", bias_shape(2));
                 b.fn = [&](Graph<double>& g) {
                   Var mid = ad::relu(g, ad::conv(g, g.param(x), g.param(sw), g.param(sb), {}));
                   return b.project(g, ad::conv(g, mid, g.param(tw), g.param(tb), {}));
                 };
               }});
  auto dilated_probe = [&](std::string name, DilatedRank rank, S shape, std::size_t cin, std::size_t cout) {
    v.push_back({name, "", Mode::Eval, [=](ProbeBench& b) {
                   auto& x = b.tensor("x", shape);
                   DilatedConvSpec spec;
                   spec.rank = rank;
                   spec.in_channels = cin;
                   spec.out_channels = cout;
                   auto layer = std::make_shared<DilatedConvLayer<double>>(b.store(), "dil", spec, b.init());
                   b.fn = [&b, &x, layer](Graph<double>& g) { return b.project(g, (*layer)(g, g.param(x))); };
                 }});
  };
  dilated_probe("conv_dilated_1d", DilatedRank::Temporal1D, S{{Axis::B, 2}, {Axis::C, 2}, {Axis::T, 7}}, 2, 1);
  dilated_probe("conv_dilated_2d", DilatedRank::Spatial2D,
                S{{Axis::B, 1}, {Axis::C, 2}, {Axis::T, 2}, {Axis::H, 5}, {Axis::W, 6}}, 2, 2);
  v.push_back({"temporal_attention", "", Mode::Eval, [](ProbeBench& b) {
                 auto& x = b.tensor("x", S{{Axis::B, 1}, {Axis::C, 2}, {Axis::U, 2}, {Axis::T, 3}, {Axis::H, 3},
                                            {Axis::W, 3}});
                 auto ta = std::make_shared<TemporalAttention<double>>(b.store(), "ta", b.init());
                 b.fn = [&b, &x, ta](Graph<double>& g) { return b.project(g, (*ta)(g, g.param(x))); };
               }});
  v.push_back({"channel_attention", "", Mode::Eval, [](ProbeBench& b) {
                 auto& x = b.tensor("x", S{{Axis::B, 2}, {Axis::C, 4}, {Axis::T, 2}, {Axis::H, 3}, {Axis::W, 3}});
                 auto ca = std::make_shared<ChannelAttention<double>>(b.store(), "ca", 4, 2, b.init());
                 b.fn = [&b, &x, ca](Graph<double>& g) { return b.project(g, (*ca)(g, g.param(x))); };
               }});
  v.push_back({"spatiotemporal_attention", "", Mode::Eval, [](ProbeBench& b) {
                 auto& x = b.tensor("x", S{{Axis::B, 2}, {Axis::C, 2}, {Axis::T, 4}, {Axis::H, 4}, {Axis::W, 5}});
                 auto sta = std::make_shared<SpatioTemporalAttention<double>>(b.store(), "sta", b.init());
                 b.fn = [&b, &x, sta](Graph<double>& g) { return b.project(g, (*sta)(g, g.param(x))); };
               }});
  v.push_back({"f4d_block", "", Mode::Eval, [](ProbeBench& b) {
                 BlockConfig cfg;
                 cfg.channels = 4;
                 cfg.units = 2;
                 cfg.reduction = 2;
                 auto& x = b.tensor("x", S{{Axis::B, 2}, {Axis::C, 4}, {Axis::T, 3}, {Axis::H, 4}, {Axis::W, 4}});
                 auto block = std::make_shared<F4DBlock<double>>(b.store(), "block", cfg, b.init());
                 // Non-trivial running statistics so eval-mode BN is not the identity.
                 for (auto& [n, t] : b.store().buffers())
                   for (auto& val : t->mutable_data())
                     val = n.ends_with("var") ? 0.5 + std::abs(val) : 0.1 * val;
                 b.fn = [&b, &x, block](Graph<double>& g) { return b.project(g, (*block)(g, g.param(x))); };
               }});
  return v;
}

inline GradProbeResult run_probe(const GradProbe& probe, std::uint64_t seed, GradCheckOptions opt = {}) {
  ProbeBench bench(seed);
  probe.build(bench);
  GradProbeResult r{probe.name, probe.op, seed, {}, {}};
  {
    Graph<double> g(probe.mode, seed);
    bench.fn(g);
    for (std::size_t i = 0; i < g.size(); ++i) r.ops_seen.insert(std::string(g.op_name(Var{i})));
  }
  opt.seed = seed;
  opt.mode = probe.mode;
  r.check = grad_check(bench.fn, bench.store().parameters(), opt);
  return r;
}

/// Registry ops not certified by any probe in `results`.
inline std::vector<std::string> uncovered_ops(const std::vector<GradProbeResult>& results) {
  std::set<std::string> covered;
  for (const auto& r : results)
    if (!r.op.empty() && r.check.checked > 0) covered.insert(r.op);
  std::vector<std::string> missing;
  for (auto op : kDifferentiableOps)
    if (!covered.count(std::string(op))) missing.emplace_back(op);
  return missing;
}

}  // namespace f4d
