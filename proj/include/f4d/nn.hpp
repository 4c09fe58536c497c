#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "f4d/autodiff.hpp"
#include "f4d/complexity.hpp"
#include "f4d/conv.hpp"

namespace f4d {

/// Owns every parameter and batch-norm state of a model. Addresses are
/// stable for the store's lifetime; names are unique.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value), trainable));
    return *params_.back();
  }

  ad::BatchNormState<T>& add_state(const std::string& name, std::size_t channels) {
    for (const auto& [n, s] : states_)
      if (n == name) throw std::invalid_argument("duplicate state name '" + name + "'");
    states_.emplace_back(name, std::make_unique<ad::BatchNormState<T>>(channels));
    return *states_.back().second;
  }

  Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::vector<Parameter<T>*> parameters() const {
    std::vector<Parameter<T>*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  /// Running statistics, flattened to ("<name>.running_mean", tensor) pairs.
  std::vector<std::pair<std::string, Tensor<T>*>> buffers() const {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (const auto& [n, s] : states_) {
      out.emplace_back(n + ".running_mean", &s->running_mean);
      out.emplace_back(n + ".running_var", &s->running_var);
    }
    return out;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.shape().numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<ad::BatchNormState<T>>>> states_;
};

/// Centered uniform init scaled by 1/sqrt(fan_in). A hollow initializer
/// returns storage-free tensors for counting-only models.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed, bool hollow = false) : rng_(seed), hollow_(hollow) {}

  bool hollow() const { return hollow_; }

  template <typename T>
  Tensor<T> uniform(const Shape& s, std::size_t fan_in) {
    if (hollow_) return Tensor<T>::hollow(s);
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
    std::uniform_real_distribution<double> d(-bound, bound);
    Tensor<T> t(s);
    for (auto& v : t.mutable_data()) v = static_cast<T>(d(rng_));
    return t;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  bool hollow_ = false;
};

template <typename T>
struct ConvLayer {
  std::string name;
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  ConvOptions options;

  ConvLayer() = default;
  ConvLayer(ParameterStore<T>& store, const std::string& n, const Shape& wshape, bool with_bias,
            Initializer& init, ConvOptions opt = {})
      : name(n), options(opt) {
    const std::size_t fan_in = wshape.numel() / wshape.extent(Axis::O);
    weight = &store.add(n + ".weight", init.uniform<T>(wshape, fan_in));
    if (with_bias) bias = &store.add(n + ".bias", init.uniform<T>(bias_shape(wshape.extent(Axis::O)), fan_in));
  }

  Var operator()(Graph<T>& g, Var x) const {
    std::optional<Var> b;
    if (bias) b = g.param(*bias);
    return ad::conv(g, x, g.param(*weight), b, options);
  }

  Shape cost(CostRecorder& rec, const Shape& in) const {
    auto geo = ConvGeometry::make(in, weight->value.shape(), options);
    rec.conv(name, geo, bias != nullptr);
    return geo.out_shape;
  }
};

template <typename T>
struct BatchNormLayer {
  std::string name;
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  ad::BatchNormState<T>* state = nullptr;
  ad::BatchNormOptions options;

  BatchNormLayer() = default;
  BatchNormLayer(ParameterStore<T>& store, const std::string& n, std::size_t channels,
                 ad::BatchNormOptions opt = {})
      : name(n), options(opt) {
    gamma = &store.add(n + ".gamma", Tensor<T>(Shape{{Axis::C, channels}}, T(1)));
    beta = &store.add(n + ".beta", Tensor<T>(Shape{{Axis::C, channels}}, T(0)));
    state = &store.add_state(n, channels);
  }

  Var operator()(Graph<T>& g, Var x) const {
    return ad::batch_norm(g, x, g.param(*gamma), g.param(*beta), *state, options);
  }

  void cost(CostRecorder& rec, const Shape& in) const { rec.batch_norm(name, in); }
};

template <typename T>
struct LinearLayer {
  std::string name;
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  LinearLayer() = default;
  LinearLayer(ParameterStore<T>& store, const std::string& n, std::size_t in, std::size_t out,
              bool with_bias, Initializer& init)
      : name(n) {
    weight = &store.add(n + ".weight", init.uniform<T>(Shape{{Axis::O, out}, {Axis::C, in}}, in));
    if (with_bias) bias = &store.add(n + ".bias", init.uniform<T>(bias_shape(out), in));
  }

  std::size_t in_features() const { return weight->value.shape().extent(Axis::C); }
  std::size_t out_features() const { return weight->value.shape().extent(Axis::O); }

  Var operator()(Graph<T>& g, Var x) const {
    std::optional<Var> b;
    if (bias) b = g.param(*bias);
    return ad::linear(g, x, g.param(*weight), b);
  }

  Shape cost(CostRecorder& rec, const Shape& in, bool shared = false) const {
    const auto rows = in.numel() / in.extent(Axis::C);
    rec.dense(name, rows, in_features(), out_features(), bias != nullptr, shared);
    return in.with_extent(Axis::C, out_features());
  }
};

/// Multi-path dilated convolution with one shared bias.
template <typename T>
struct DilatedConvLayer {
  std::string name;
  DilatedConvSpec spec;
  std::vector<Parameter<T>*> paths;
  Parameter<T>* bias = nullptr;

  DilatedConvLayer() = default;
  DilatedConvLayer(ParameterStore<T>& store, const std::string& n, DilatedConvSpec s, Initializer& init)
      : name(n), spec(std::move(s)) {
    const auto ws = spec.path_weight_shape();
    const std::size_t fan_in = ws.numel() / ws.extent(Axis::O) * spec.dilations.size();
    for (std::size_t p = 0; p < spec.dilations.size(); ++p)
      paths.push_back(&store.add(n + ".path" + std::to_string(p) + ".weight", init.uniform<T>(ws, fan_in)));
    bias = &store.add(n + ".bias", init.uniform<T>(bias_shape(spec.out_channels), fan_in));
  }

  Var operator()(Graph<T>& g, Var x) const {
    if (g.value(x).shape().extent(Axis::C) != spec.in_channels)
      throw ShapeError(name + ": expected " + std::to_string(spec.in_channels) + " channels, got " +
                       g.value(x).shape().str());
    Var acc = ad::conv(g, x, g.param(*paths[0]), g.param(*bias), spec.path_options(0));
    for (std::size_t p = 1; p < paths.size(); ++p)
      acc = ad::add(g, acc, ad::conv(g, x, g.param(*paths[p]), std::nullopt, spec.path_options(p)));
    return acc;
  }

  DilatedConvWeights<T> weights() const {
    DilatedConvWeights<T> w;
    for (auto* p : paths) w.paths.push_back(p->value);
    w.bias = bias->value;
    return w;
  }

  Shape cost(CostRecorder& rec, const Shape& in) const {
    Shape out;
    for (std::size_t p = 0; p < paths.size(); ++p) {
      auto geo = ConvGeometry::make(in, paths[p]->value.shape(), spec.path_options(p));
      rec.conv(name + ".path" + std::to_string(p), geo, p == 0);
      out = geo.out_shape;
    }
    if (paths.size() > 1) rec.elementwise(name + ".sum", "add", (paths.size() - 1) * out.numel());
    return out;
  }
};

/// Run `fn(Graph&) -> Var` once without keeping gradients and return the value.
template <typename T, typename Fn>
Tensor<T> evaluate(Fn&& fn, Mode mode = Mode::Eval, std::uint64_t seed = 0) {
  Graph<T> g(mode, seed);
  return g.value(fn(g));
}

}  // namespace f4d
