#pragma once

// Tape-based reverse-mode differentiation over the library's op set. Every
// op computes its forward value eagerly and records a backward closure; the
// tape is walked once in reverse by Graph::backward.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "f4d/conv.hpp"
#include "f4d/tensor.hpp"

namespace f4d {

enum class Mode { Train, Eval };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool train = true)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.is_hollow() ? Tensor<T>::hollow(value.shape()) : Tensor<T>(value.shape())),
        trainable(train) {}

  void zero_grad() {
    if (!value.is_hollow()) grad = Tensor<T>(value.shape());
  }
};

/// Handle to a node on a Graph tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Names of every primitive with a forward and a backward rule.
inline constexpr std::array<std::string_view, 19> kDifferentiableOps{
    "add",         "scale",       "mul",         "relu",         "sigmoid",
    "reduce_mean", "reduce_max",  "concat",      "permute",      "merge_unit",
    "split_unit",  "reshape",     "conv4d_via_3d", "linear",     "batch_norm",
    "dropout",     "avg_pool",    "sum",         "softmax_cross_entropy"};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(Mode mode = Mode::Eval, std::uint64_t seed = 0) : mode_(mode), rng_(seed) {}

  Mode mode() const { return mode_; }
  std::mt19937_64& rng() { return rng_; }

  /// Leaf that does not receive gradients.
  Var constant(Tensor<T> v) { return push_node(std::move(v), nullptr, false, "constant", nullptr); }

  /// Leaf whose gradient is kept on the tape (read it with grad()).
  Var input(Tensor<T> v) { return push_node(std::move(v), nullptr, true, "input", nullptr); }

  /// Leaf bound to a Parameter; backward() accumulates into Parameter::grad.
  Var param(Parameter<T>& p) {
    if (p.value.is_hollow()) throw std::logic_error("parameter '" + p.name + "' belongs to a counting-only model");
    return push_node(p.value, nullptr, p.trainable, "param", &p);
  }

  /// Record an op output. `inputs` decide whether the node needs a gradient.
  Var record(Tensor<T> v, std::initializer_list<Var> inputs, std::string_view op, BackwardFn fn) {
    bool needs = false;
    for (auto in : inputs) needs = needs || nodes_.at(in.id).needs_grad;
    return push_node(std::move(v), needs ? std::move(fn) : BackwardFn{}, needs, op, nullptr);
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::string_view op_name(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  std::span<T> grad_span(Var v) { return nodes_.at(v.id).grad.mutable_data(); }
  std::span<const T> grad_of(std::size_t id) const { return nodes_[id].grad.data(); }

  /// Reverse sweep from a scalar loss. Tape gradients are reset on every
  /// call; Parameter gradients accumulate across calls.
  void backward(Var loss) {
    const auto& lv = nodes_.at(loss.id).value;
    if (lv.size() != 1)
      throw std::invalid_argument("backward needs a scalar loss, got shape " + lv.shape().str());
    for (auto& n : nodes_) n.grad = n.needs_grad ? Tensor<T>(n.value.shape()) : Tensor<T>();
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad.mutable_data()[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto pg = n.param->grad.mutable_data();
        auto ng = n.grad.data();
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += ng[k];
      }
    }
  }

  /// Hash of every discrete branch taken during the forward pass (ReLU
  /// masks, max selections). Equal signatures at two points mean no kink lies
  /// between them along the path that was evaluated.
  std::uint64_t branch_signature() const { return signature_; }
  void mix_signature(std::uint64_t v) {
    signature_ ^= v + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool needs_grad = false;
    std::string_view op;
    Parameter<T>* param = nullptr;
  };

  Var push_node(Tensor<T> v, BackwardFn fn, bool needs, std::string_view op, Parameter<T>* p) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), std::move(fn), needs, op, p});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  Mode mode_;
  std::mt19937_64 rng_;
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

namespace ad {

namespace detail {

template <typename T>
void accumulate(Graph<T>& g, Var v, std::span<const T> src) {
  if (!g.needs_grad(v)) return;
  auto dst = g.grad_span(v);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

/// Sum `src` (shaped like `from`) down onto the broadcast shape `to`.
template <typename T>
void sum_into(std::span<const T> src, const Shape& from, const Shape& to, std::span<T> dst) {
  auto st = f4d::detail::aligned_strides(from, to);
  f4d::detail::for_each_offset(from, st, [&](std::size_t lin, std::size_t o) { dst[o] += src[lin]; });
}

}  // namespace detail

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  auto out = f4d::add(g.value(a), g.value(b));
  return g.record(std::move(out), {a, b}, "add", [a, b](Graph<T>& gr, std::size_t self) {
    detail::accumulate(gr, a, gr.grad_of(self));
    detail::accumulate(gr, b, gr.grad_of(self));
  });
}

template <typename T>
Var scale(Graph<T>& g, Var x, T c) {
  auto out = map(g.value(x), [c](T v) { return c * v; });
  return g.record(std::move(out), {x}, "scale", [x, c](Graph<T>& gr, std::size_t self) {
    auto dy = gr.grad_of(self);
    auto dx = gr.grad_span(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c * dy[i];
  });
}

/// Element-wise product with `b` broadcast against `a`.
template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  auto out = broadcast_mul(g.value(a), g.value(b));
  return g.record(std::move(out), {a, b}, "mul", [a, b](Graph<T>& gr, std::size_t self) {
    const auto& va = gr.value(a);
    const auto& vb = gr.value(b);
    auto dy = gr.grad_of(self);
    auto sb = f4d::detail::aligned_strides(va.shape(), vb.shape());
    if (gr.needs_grad(a)) {
      auto da = gr.grad_span(a);
      auto pb = vb.data();
      f4d::detail::for_each_offset(va.shape(), sb,
                                   [&](std::size_t lin, std::size_t ob) { da[lin] += dy[lin] * pb[ob]; });
    }
    if (gr.needs_grad(b)) {
      auto db = gr.grad_span(b);
      auto pa = va.data();
      f4d::detail::for_each_offset(va.shape(), sb,
                                   [&](std::size_t lin, std::size_t ob) { db[ob] += dy[lin] * pa[lin]; });
    }
  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  const auto& vx = g.value(x);
  Tensor<T> out(vx.shape());
  auto o = out.mutable_data();
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    const bool on = vx[i] > T(0);
    o[i] = on ? vx[i] : T(0);
    h = h * 1099511628211ULL + (on ? 2 : 1);
  }
  g.mix_signature(h);
  return g.record(std::move(out), {x}, "relu", [x](Graph<T>& gr, std::size_t self) {
    const auto& in = gr.value(x);
    auto dy = gr.grad_of(self);
    auto dx = gr.grad_span(x);
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (in[i] > T(0)) dx[i] += dy[i];
  });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
  auto out = map(g.value(x), [](T v) { return T(1) / (T(1) + std::exp(-v)); });
  return g.record(std::move(out), {x}, "sigmoid", [x](Graph<T>& gr, std::size_t self) {
    const auto& y = gr.value(Var{self});
    auto dy = gr.grad_of(self);
    auto dx = gr.grad_span(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var reduce_mean(Graph<T>& g, Var x, std::vector<Axis> axes) {
  auto r = reduce(g.value(x), axes, ReduceKind::Mean);
  const std::size_t count = g.value(x).size() / r.value.size();
  return g.record(std::move(r.value), {x}, "reduce_mean", [x, count](Graph<T>& gr, std::size_t self) {
    const auto& in_shape = gr.value(x).shape();
    const auto& out_shape = gr.value(Var{self}).shape();
    auto dy = gr.grad_of(self);
    auto dx = gr.grad_span(x);
    auto so = f4d::detail::aligned_strides(in_shape, out_shape);
    const T inv = T(1) / static_cast<T>(count);
    f4d::detail::for_each_offset(in_shape, so,
                                 [&](std::size_t lin, std::size_t oo) { dx[lin] += dy[oo] * inv; });
  });
}

/// Max reduction; the gradient flows to the selected (lowest-index) element.
template <typename T>
Var reduce_max(Graph<T>& g, Var x, std::vector<Axis> axes) {
  auto r = reduce(g.value(x), axes, ReduceKind::Max);
  std::uint64_t h = 0;
  for (auto i : r.argmax) h = h * 1099511628211ULL + i + 1;
  g.mix_signature(h);
  return g.record(std::move(r.value), {x}, "reduce_max",
                  [x, arg = std::move(r.argmax)](Graph<T>& gr, std::size_t self) {
                    auto dy = gr.grad_of(self);
                    auto dx = gr.grad_span(x);
                    for (std::size_t o = 0; o < arg.size(); ++o) dx[arg[o]] += dy[o];
                  });
}

template <typename T>
Var concat(Graph<T>& g, Var a, Var b, Axis axis) {
  auto out = f4d::concat(g.value(a), g.value(b), axis);
  return g.record(std::move(out), {a, b}, "concat", [a, b, axis](Graph<T>& gr, std::size_t self) {
    const auto& sa = gr.value(a).shape();
    const auto& so = gr.value(Var{self}).shape();
    const auto ea = sa.extent(axis);
    Tensor<T> dy(so, std::vector<T>(gr.grad_of(self).begin(), gr.grad_of(self).end()));
    if (gr.needs_grad(a)) detail::accumulate(gr, a, slice(dy, axis, 0, ea).data());
    if (gr.needs_grad(b)) detail::accumulate(gr, b, slice(dy, axis, ea, so.extent(axis) - ea).data());
  });
}

template <typename T>
Var permute(Graph<T>& g, Var x, AxisPermutation p) {
  auto out = f4d::permute(g.value(x), p);
  return g.record(std::move(out), {x}, "permute", [x, p](Graph<T>& gr, std::size_t self) {
    Tensor<T> dy(gr.value(Var{self}).shape(),
                 std::vector<T>(gr.grad_of(self).begin(), gr.grad_of(self).end()));
    detail::accumulate(gr, x, f4d::permute(dy, p).data());
  });
}

template <typename T>
Var merge_unit(Graph<T>& g, Var x) {
  auto out = merge_unit_into_batch(g.value(x));
  return g.record(std::move(out), {x}, "merge_unit", [x](Graph<T>& gr, std::size_t self) {
    const auto& sx = gr.value(x).shape();
    Tensor<T> dy(gr.value(Var{self}).shape(),
                 std::vector<T>(gr.grad_of(self).begin(), gr.grad_of(self).end()));
    auto back = split_unit_from_batch(dy, sx.extent(Axis::U));
    // split puts U right after B; restore x's axis order if it differed.
    std::vector<Axis> order;
    for (const auto& d : sx.dims()) order.push_back(d.axis);
    detail::accumulate(gr, x, f4d::detail::reorder(back, order).data());
  });
}

template <typename T>
Var split_unit(Graph<T>& g, Var x, std::size_t units) {
  auto out = split_unit_from_batch(g.value(x), units);
  return g.record(std::move(out), {x}, "split_unit", [x](Graph<T>& gr, std::size_t self) {
    detail::accumulate(gr, x, gr.grad_of(self));
  });
}

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape s) {
  auto out = g.value(x).reshaped(std::move(s));
  return g.record(std::move(out), {x}, "reshape", [x](Graph<T>& gr, std::size_t self) {
    detail::accumulate(gr, x, gr.grad_of(self));
  });
}

/// Convolution over (U,T,H,W) using the shifted-3D-slab kernel. `w` is
/// (O,C,U,T,H,W); `bias`, when given, is (O).
template <typename T>
Var conv(Graph<T>& g, Var x, Var w, std::optional<Var> bias, const ConvOptions& opt) {
  auto geo = ConvGeometry::make(g.value(x).shape(), g.value(w).shape(), opt);
  Tensor<T> out(geo.out_shape);
  conv_forward<T>(geo, g.value(x).data(), g.value(w).data(), out.mutable_data());
  if (bias) {
    if (!(g.value(*bias).shape() == bias_shape(geo.out_ch)))
      throw ShapeError("conv bias must be (O:" + std::to_string(geo.out_ch) + ")");
    add_channel_bias<T>(geo, g.value(*bias).data(), out.mutable_data());
  }
  auto fn = [x, w, bias, geo](Graph<T>& gr, std::size_t self) {
    auto dy = gr.grad_of(self);
    if (gr.needs_grad(x)) conv_backward_input<T>(geo, dy, gr.value(w).data(), gr.grad_span(x));
    if (gr.needs_grad(w)) conv_backward_weight<T>(geo, dy, gr.value(x).data(), gr.grad_span(w));
    if (bias && gr.needs_grad(*bias)) {
      auto db = gr.grad_span(*bias);
      const std::size_t plane = geo.out_plane();
      for (std::size_t n = 0; n < geo.batch; ++n)
        for (std::size_t o = 0; o < geo.out_ch; ++o) {
          const T* p = dy.data() + (n * geo.out_ch + o) * plane;
          T acc = 0;
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
          db[o] += acc;
        }
    }
  };
  if (bias) return g.record(std::move(out), {x, w, *bias}, "conv4d_via_3d", std::move(fn));
  return g.record(std::move(out), {x, w}, "conv4d_via_3d", std::move(fn));
}

namespace detail {
struct ChannelLayout {
  std::size_t outer = 1;
  std::size_t channels = 1;
  std::size_t inner = 1;
};
inline ChannelLayout channel_layout(const Shape& s) {
  ChannelLayout l;
  const auto ic = s.index_of(Axis::C);
  for (std::size_t i = 0; i < ic; ++i) l.outer *= s[i].extent;
  l.channels = s[ic].extent;
  for (std::size_t i = ic + 1; i < s.rank(); ++i) l.inner *= s[i].extent;
  return l;
}
}  // namespace detail

/// Dense layer over the C axis: y[..,j,..] = sum_k W[j,k] x[..,k,..] + b[j].
/// `w` is (O:out, C:in); `bias` is (O:out).
template <typename T>
Var linear(Graph<T>& g, Var x, Var w, std::optional<Var> bias) {
  const auto& sx = g.value(x).shape();
  const auto& sw = g.value(w).shape();
  const auto lx = detail::channel_layout(sx);
  if (!(sw == Shape{{Axis::O, sw.extent_or_one(Axis::O)}, {Axis::C, lx.channels}}))
    throw ShapeError("linear weight " + sw.str() + " does not match input " + sx.str());
  const std::size_t nout = sw.extent(Axis::O);
  if (bias && !(g.value(*bias).shape() == bias_shape(nout)))
    throw ShapeError("linear bias must be (O:" + std::to_string(nout) + ")");
  Tensor<T> out(sx.with_extent(Axis::C, nout));
  {
    auto px = g.value(x).data();
    auto pw = g.value(w).data();
    auto po = out.mutable_data();
    for (std::size_t o = 0; o < lx.outer; ++o)
      for (std::size_t j = 0; j < nout; ++j) {
        T* yrow = po.data() + (o * nout + j) * lx.inner;
        if (bias) std::fill(yrow, yrow + lx.inner, g.value(*bias)[j]);
        for (std::size_t k = 0; k < lx.channels; ++k) {
          const T wv = pw[j * lx.channels + k];
          const T* xrow = px.data() + (o * lx.channels + k) * lx.inner;
          for (std::size_t i = 0; i < lx.inner; ++i) yrow[i] += wv * xrow[i];
        }
      }
  }
  auto fn = [x, w, bias, lx, nout](Graph<T>& gr, std::size_t self) {
    auto dy = gr.grad_of(self);
    auto px = gr.value(x).data();
    auto pw = gr.value(w).data();
    const bool gx = gr.needs_grad(x), gw = gr.needs_grad(w);
    std::span<T> dx = gx ? gr.grad_span(x) : std::span<T>{};
    std::span<T> dw = gw ? gr.grad_span(w) : std::span<T>{};
    std::span<T> db = (bias && gr.needs_grad(*bias)) ? gr.grad_span(*bias) : std::span<T>{};
    for (std::size_t o = 0; o < lx.outer; ++o)
      for (std::size_t j = 0; j < nout; ++j) {
        const T* dyrow = dy.data() + (o * nout + j) * lx.inner;
        if (!db.empty())
          for (std::size_t i = 0; i < lx.inner; ++i) db[j] += dyrow[i];
        for (std::size_t k = 0; k < lx.channels; ++k) {
          const std::size_t xoff = (o * lx.channels + k) * lx.inner;
          if (gx) {
            const T wv = pw[j * lx.channels + k];
            for (std::size_t i = 0; i < lx.inner; ++i) dx[xoff + i] += wv * dyrow[i];
          }
          if (gw) {
            T acc = 0;
            for (std::size_t i = 0; i < lx.inner; ++i) acc += dyrow[i] * px[xoff + i];
            dw[j * lx.channels + k] += acc;
          }
        }
      }
  };
  if (bias) return g.record(std::move(out), {x, w, *bias}, "linear", std::move(fn));
  return g.record(std::move(out), {x, w}, "linear", std::move(fn));
}

/// Running statistics of one batch-norm layer, per channel.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{{Axis::C, channels}}, T(0)), running_var(Shape{{Axis::C, channels}}, T(1)) {}
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization over every non-C axis. Train mode normalizes
/// with batch statistics and updates `state`; eval mode uses `state`.
template <typename T>
Var batch_norm(Graph<T>& g, Var x, Var gamma, Var beta, BatchNormState<T>& state,
               BatchNormOptions opt = {}) {
  const auto& vx = g.value(x);
  const auto l = detail::channel_layout(vx.shape());
  if (g.value(gamma).size() != l.channels || g.value(beta).size() != l.channels ||
      state.running_mean.size() != l.channels)
    throw ShapeError("batch_norm parameter size mismatch for " + vx.shape().str());
  const std::size_t count = l.outer * l.inner;
  const bool train = g.mode() == Mode::Train;
  std::vector<T> mean(l.channels, T(0)), inv_std(l.channels, T(0));
  auto px = vx.data();
  if (train) {
    if (count < 2) throw ShapeError("batch_norm in train mode needs more than one value per channel");
    for (std::size_t c = 0; c < l.channels; ++c) {
      T s = 0;
      for (std::size_t o = 0; o < l.outer; ++o) {
        const T* row = px.data() + (o * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) s += row[i];
      }
      mean[c] = s / static_cast<T>(count);
      T v = 0;
      for (std::size_t o = 0; o < l.outer; ++o) {
        const T* row = px.data() + (o * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) v += (row[i] - mean[c]) * (row[i] - mean[c]);
      }
      const T var = v / static_cast<T>(count);
      inv_std[c] = T(1) / std::sqrt(var + static_cast<T>(opt.eps));
      const T m = static_cast<T>(opt.momentum);
      state.running_mean[c] = (T(1) - m) * state.running_mean[c] + m * mean[c];
      state.running_var[c] =
          (T(1) - m) * state.running_var[c] + m * v / static_cast<T>(count - 1);
    }
  } else {
    for (std::size_t c = 0; c < l.channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + static_cast<T>(opt.eps));
    }
  }
  Tensor<T> xhat(vx.shape());
  Tensor<T> out(vx.shape());
  {
    auto ph = xhat.mutable_data();
    auto po = out.mutable_data();
    const auto& ga = g.value(gamma);
    const auto& be = g.value(beta);
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t c = 0; c < l.channels; ++c) {
        const std::size_t off = (o * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) {
          ph[off + i] = (px[off + i] - mean[c]) * inv_std[c];
          po[off + i] = ga[c] * ph[off + i] + be[c];
        }
      }
  }
  return g.record(
      std::move(out), {x, gamma, beta}, "batch_norm",
      [x, gamma, beta, l, train, count, inv_std = std::move(inv_std), xhat = std::move(xhat)](
          Graph<T>& gr, std::size_t self) {
        auto dy = gr.grad_of(self);
        const auto& ga = gr.value(gamma);
        auto ph = xhat.data();
        std::vector<T> sum_dy(l.channels, T(0)), sum_dy_xhat(l.channels, T(0));
        for (std::size_t o = 0; o < l.outer; ++o)
          for (std::size_t c = 0; c < l.channels; ++c) {
            const std::size_t off = (o * l.channels + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) {
              sum_dy[c] += dy[off + i];
              sum_dy_xhat[c] += dy[off + i] * ph[off + i];
            }
          }
        if (gr.needs_grad(gamma)) {
          auto dg = gr.grad_span(gamma);
          for (std::size_t c = 0; c < l.channels; ++c) dg[c] += sum_dy_xhat[c];
        }
        if (gr.needs_grad(beta)) {
          auto db = gr.grad_span(beta);
          for (std::size_t c = 0; c < l.channels; ++c) db[c] += sum_dy[c];
        }
        if (!gr.needs_grad(x)) return;
        auto dx = gr.grad_span(x);
        const T n = static_cast<T>(count);
        for (std::size_t o = 0; o < l.outer; ++o)
          for (std::size_t c = 0; c < l.channels; ++c) {
            const std::size_t off = (o * l.channels + c) * l.inner;
            const T k = ga[c] * inv_std[c];
            for (std::size_t i = 0; i < l.inner; ++i) {
              if (train)
                dx[off + i] += k / n * (n * dy[off + i] - sum_dy[c] - ph[off + i] * sum_dy_xhat[c]);
              else
                dx[off + i] += k * dy[off + i];
            }
          }
      });
}

/// Identity in eval mode; in train mode multiplies by a Bernoulli(1-rate)
/// mask scaled by 1/(1-rate).
template <typename T>
Var dropout(Graph<T>& g, Var x, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
  const auto& vx = g.value(x);
  std::vector<T> mask(vx.size(), T(1));
  if (g.mode() == Mode::Train && rate > 0.0) {
    std::bernoulli_distribution keep(1.0 - rate);
    const T s = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : mask) m = keep(g.rng()) ? s : T(0);
  }
  Tensor<T> out(vx.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = vx[i] * mask[i];
  return g.record(std::move(out), {x}, "dropout", [x, mask = std::move(mask)](Graph<T>& gr, std::size_t self) {
    auto dy = gr.grad_of(self);
    auto dx = gr.grad_span(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

/// Non-overlapping average pooling over (H, W) by `factor`. H and W must be
/// the two trailing axes and divisible by the factor.
template <typename T>
Var avg_pool(Graph<T>& g, Var x, std::size_t factor) {
  const auto& s = g.value(x).shape();
  const auto r = s.rank();
  if (r < 2 || s[r - 2].axis != Axis::H || s[r - 1].axis != Axis::W)
    throw ShapeError("avg_pool expects trailing (H,W) axes, got " + s.str());
  const std::size_t H = s[r - 2].extent, W = s[r - 1].extent;
  if (factor < 1 || H % factor || W % factor)
    throw ShapeError("avg_pool factor " + std::to_string(factor) + " does not divide " + s.str());
  const std::size_t OH = H / factor, OW = W / factor;
  const std::size_t planes = s.numel() / (H * W);
  Tensor<T> out(s.with_extent(Axis::H, OH).with_extent(Axis::W, OW));
  const T inv = T(1) / static_cast<T>(factor * factor);
  auto px = g.value(x).data();
  auto po = out.mutable_data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w)
        po[(p * OH + h / factor) * OW + w / factor] += px[(p * H + h) * W + w] * inv;
  return g.record(std::move(out), {x}, "avg_pool",
                  [x, planes, H, W, OH, OW, factor, inv](Graph<T>& gr, std::size_t self) {
                    auto dy = gr.grad_of(self);
                    auto dx = gr.grad_span(x);
                    for (std::size_t p = 0; p < planes; ++p)
                      for (std::size_t h = 0; h < H; ++h)
                        for (std::size_t w = 0; w < W; ++w)
                          dx[(p * H + h) * W + w] += dy[(p * OH + h / factor) * OW + w / factor] * inv;
                  });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  T s = 0;
  for (auto v : g.value(x).data()) s += v;
  return g.record(Tensor<T>(Shape{}, std::vector<T>{s}), {x}, "sum",
                  [x](Graph<T>& gr, std::size_t self) {
                    const T d = gr.grad_of(self)[0];
                    for (auto& v : gr.grad_span(x)) v += d;
                  });
}

/// Mean softmax cross-entropy of logits shaped (B, C) against labels.
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, const std::vector<std::size_t>& labels) {
  const auto& s = g.value(logits).shape();
  if (s.rank() != 2 || s[0].axis != Axis::B || s[1].axis != Axis::C)
    throw ShapeError("softmax_cross_entropy expects (B,C) logits, got " + s.str());
  const std::size_t n = s[0].extent, k = s[1].extent;
  if (labels.size() != n) throw ShapeError("label count does not match batch");
  std::vector<T> prob(n * k);
  T loss = 0;
  const auto& z = g.value(logits);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw std::out_of_range("label out of range");
    T m = z[i * k];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, z[i * k + j]);
    T den = 0;
    for (std::size_t j = 0; j < k; ++j) den += std::exp(z[i * k + j] - m);
    for (std::size_t j = 0; j < k; ++j) prob[i * k + j] = std::exp(z[i * k + j] - m) / den;
    loss -= (z[i * k + labels[i]] - m) - std::log(den);
  }
  loss /= static_cast<T>(n);
  return g.record(Tensor<T>(Shape{}, std::vector<T>{loss}), {logits}, "softmax_cross_entropy",
                  [logits, labels, prob = std::move(prob), n, k](Graph<T>& gr, std::size_t self) {
                    const T d = gr.grad_of(self)[0] / static_cast<T>(n);
                    auto dz = gr.grad_span(logits);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < k; ++j)
                        dz[i * k + j] += d * (prob[i * k + j] - (j == labels[i] ? T(1) : T(0)));
                  });
}

}  // namespace ad
}  // namespace f4d
