#pragma once

// Attention gates with inner residual connections. Each module maps a feature
// tensor F to M (x) F + F, where M is a sigmoid map broadcast over the axes it
// does not cover:
//
//   temporal          M is (C:1, U, T, H:1, W:1), applied in the 4D layout
//   channel           M is (C, T:1, H:1, W:1) per merged-batch item
//   spatio-temporal   M is (C:1, T, H, W) per merged-batch item

#include <string>

#include "f4d/nn.hpp"

namespace f4d {

struct AttentionResult {
  Var out;
  Var map;
};

namespace detail {
inline void require_axes(const Shape& s, std::initializer_list<Axis> axes, const std::string& who) {
  for (Axis a : axes)
    if (!s.has(a)) throw ShapeError(who + ": input " + s.str() + " lacks axis '" + axis_name(a) + "'");
}
}  // namespace detail

/// Temporal attention over all action units. Pools over (C, H, W), sums the
/// average and max descriptors, and runs a two-path dilated 1D convolution
/// along the global time axis U*T (or along T within each unit when
/// `flatten_units` is false).
template <typename T>
class TemporalAttention {
 public:
  TemporalAttention() = default;
  TemporalAttention(ParameterStore<T>& store, const std::string& name, Initializer& init,
                    std::vector<std::size_t> dilations = {2, 3}, std::size_t extent = 3,
                    bool flatten_units = true)
      : name_(name), flatten_units_(flatten_units) {
    DilatedConvSpec spec;
    spec.rank = DilatedRank::Temporal1D;
    spec.dilations = std::move(dilations);
    spec.extent = extent;
    spec.in_channels = spec.out_channels = 1;
    conv_ = DilatedConvLayer<T>(store, name + ".conv", spec, init);
  }

  bool flatten_units() const { return flatten_units_; }
  const DilatedConvLayer<T>& conv() const { return conv_; }

  AttentionResult apply(Graph<T>& g, Var f) const {
    const auto s = g.value(f).shape();
    detail::require_axes(s, {Axis::C, Axis::U, Axis::T, Axis::H, Axis::W}, name_);
    Var avg = ad::reduce_mean(g, f, {Axis::C, Axis::H, Axis::W});
    Var mx = ad::reduce_max(g, f, {Axis::C, Axis::H, Axis::W});
    Var desc = ad::add(g, avg, mx);
    const auto ds = g.value(desc).shape();
    Var logits;
    if (flatten_units_) {
      std::vector<Dim> flat;
      if (ds.has(Axis::B)) flat.push_back({Axis::B, ds.extent(Axis::B)});
      flat.push_back({Axis::C, 1});
      flat.push_back({Axis::T, ds.extent(Axis::U) * ds.extent(Axis::T)});
      Var seq = ad::reshape(g, desc, Shape(std::move(flat)));
      logits = ad::reshape(g, conv_(g, seq), ds);
    } else {
      logits = conv_(g, desc);
    }
    Var map = ad::sigmoid(g, logits);
    Var out = ad::add(g, ad::mul(g, f, map), f);
    return {out, map};
  }

  Var operator()(Graph<T>& g, Var f) const { return apply(g, f).out; }

  void cost(CostRecorder& rec, const Shape& s) const {
    const auto desc = s.with_extent(Axis::C, 1).with_extent(Axis::H, 1).with_extent(Axis::W, 1);
    rec.elementwise(name_ + ".avg_pool", "pool", s.numel());
    rec.elementwise(name_ + ".max_pool", "pool", s.numel());
    rec.elementwise(name_ + ".desc_sum", "add", desc.numel());
    if (flatten_units_) {
      std::vector<Dim> flat;
      if (desc.has(Axis::B)) flat.push_back({Axis::B, desc.extent(Axis::B)});
      flat.push_back({Axis::C, 1});
      flat.push_back({Axis::T, desc.extent(Axis::U) * desc.extent(Axis::T)});
      conv_.cost(rec, Shape(std::move(flat)));
    } else {
      conv_.cost(rec, desc);
    }
    rec.sigmoid(name_ + ".sigmoid", desc);
    rec.elementwise(name_ + ".scale", "mul", s.numel());
    rec.elementwise(name_ + ".residual", "add", s.numel());
  }

 private:
  std::string name_;
  bool flatten_units_ = true;
  DilatedConvLayer<T> conv_;
};

/// Channel attention: shared two-layer MLP (C -> max(1, C/r) -> C, ReLU
/// between) over average- and max-pooled (T, H, W) descriptors.
template <typename T>
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(ParameterStore<T>& store, const std::string& name, std::size_t channels,
                   std::size_t reduction, Initializer& init)
      : name_(name), channels_(channels), hidden_(hidden_width(channels, reduction)) {
    squeeze_ = LinearLayer<T>(store, name + ".w0", channels_, hidden_, false, init);
    expand_ = LinearLayer<T>(store, name + ".w1", hidden_, channels_, false, init);
  }

  static std::size_t hidden_width(std::size_t channels, std::size_t reduction) {
    return std::max<std::size_t>(1, channels / std::max<std::size_t>(1, reduction));
  }

  std::size_t hidden() const { return hidden_; }
  const LinearLayer<T>& squeeze() const { return squeeze_; }
  const LinearLayer<T>& expand() const { return expand_; }

  AttentionResult apply(Graph<T>& g, Var f) const {
    const auto& s = g.value(f).shape();
    detail::require_axes(s, {Axis::C, Axis::T, Axis::H, Axis::W}, name_);
    if (s.extent(Axis::C) != channels_)
      throw ShapeError(name_ + ": expected C=" + std::to_string(channels_) + ", got " + s.str());
    Var avg = ad::reduce_mean(g, f, {Axis::T, Axis::H, Axis::W});
    Var mx = ad::reduce_max(g, f, {Axis::T, Axis::H, Axis::W});
    auto mlp = [&](Var d) { return expand_(g, ad::relu(g, squeeze_(g, d))); };
    Var map = ad::sigmoid(g, ad::add(g, mlp(avg), mlp(mx)));
    Var out = ad::add(g, ad::mul(g, f, map), f);
    return {out, map};
  }

  Var operator()(Graph<T>& g, Var f) const { return apply(g, f).out; }

  void cost(CostRecorder& rec, const Shape& s) const {
    const auto desc = s.with_extent(Axis::T, 1).with_extent(Axis::H, 1).with_extent(Axis::W, 1);
    rec.elementwise(name_ + ".avg_pool", "pool", s.numel());
    rec.elementwise(name_ + ".max_pool", "pool", s.numel());
    for (const char* branch : {".avg", ".max"}) {
      const bool shared = std::string(branch) == ".max";
      auto h = squeeze_.cost(rec, desc, shared);
      rec.relu(name_ + branch + ".relu", h);
      expand_.cost(rec, h, shared);
    }
    rec.elementwise(name_ + ".branch_sum", "add", desc.numel());
    rec.sigmoid(name_ + ".sigmoid", desc);
    rec.elementwise(name_ + ".scale", "mul", s.numel());
    rec.elementwise(name_ + ".residual", "add", s.numel());
  }

 private:
  std::string name_;
  std::size_t channels_ = 0;
  std::size_t hidden_ = 1;
  LinearLayer<T> squeeze_;
  LinearLayer<T> expand_;
};

/// Spatio-temporal attention: channel-pooled (avg, max) maps concatenated to
/// two channels, a two-path dilated 2D conv per time slice (2 -> 2), ReLU,
/// then a two-path dilated 1D temporal conv per site (2 -> 1).
template <typename T>
class SpatioTemporalAttention {
 public:
  SpatioTemporalAttention() = default;
  SpatioTemporalAttention(ParameterStore<T>& store, const std::string& name, Initializer& init,
                          std::vector<std::size_t> dilations = {2, 3}, std::size_t extent = 3)
      : name_(name) {
    DilatedConvSpec spatial;
    spatial.rank = DilatedRank::Spatial2D;
    spatial.dilations = dilations;
    spatial.extent = extent;
    spatial.in_channels = 2;
    spatial.out_channels = 2;
    DilatedConvSpec temporal;
    temporal.rank = DilatedRank::Temporal1D;
    temporal.dilations = std::move(dilations);
    temporal.extent = extent;
    temporal.in_channels = 2;
    temporal.out_channels = 1;
    spatial_ = DilatedConvLayer<T>(store, name + ".conv2d", spatial, init);
    temporal_ = DilatedConvLayer<T>(store, name + ".conv1d", temporal, init);
  }

  const DilatedConvLayer<T>& spatial() const { return spatial_; }
  const DilatedConvLayer<T>& temporal() const { return temporal_; }

  AttentionResult apply(Graph<T>& g, Var f) const {
    const auto& s = g.value(f).shape();
    detail::require_axes(s, {Axis::C, Axis::T, Axis::H, Axis::W}, name_);
    Var avg = ad::reduce_mean(g, f, {Axis::C});
    Var mx = ad::reduce_max(g, f, {Axis::C});
    Var m = ad::concat(g, avg, mx, Axis::C);
    Var hidden = ad::relu(g, spatial_(g, m));
    Var map = ad::sigmoid(g, temporal_(g, hidden));
    Var out = ad::add(g, ad::mul(g, f, map), f);
    return {out, map};
  }

  Var operator()(Graph<T>& g, Var f) const { return apply(g, f).out; }

  void cost(CostRecorder& rec, const Shape& s) const {
    const auto pooled = s.with_extent(Axis::C, 1);
    rec.elementwise(name_ + ".avg_pool", "pool", s.numel());
    rec.elementwise(name_ + ".max_pool", "pool", s.numel());
    auto h = spatial_.cost(rec, s.with_extent(Axis::C, 2));
    rec.relu(name_ + ".relu", h);
    temporal_.cost(rec, h);
    rec.sigmoid(name_ + ".sigmoid", pooled);
    rec.elementwise(name_ + ".scale", "mul", s.numel());
    rec.elementwise(name_ + ".residual", "add", s.numel());
  }

 private:
  std::string name_;
  DilatedConvLayer<T> spatial_;
  DilatedConvLayer<T> temporal_;
};

}  // namespace f4d
