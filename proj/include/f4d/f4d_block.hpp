#pragma once

#include <array>
#include <string>

#include "f4d/attention.hpp"
#include "f4d/nn.hpp"

namespace f4d {

enum class ConvKind { Factorized, Full4D };

struct AttentionSwitches {
  bool temporal = true;
  bool channel = true;
  bool spatiotemporal = true;

  static AttentionSwitches none() { return {false, false, false}; }
  friend bool operator==(const AttentionSwitches&, const AttentionSwitches&) = default;
};

struct BlockConfig {
  std::size_t channels = 16;
  std::size_t units = 4;
  /// Kernel extents over (U, T, H, W).
  std::array<std::size_t, 4> kernel{3, 3, 3, 3};
  ConvKind conv = ConvKind::Factorized;
  MidActivation mid_activation = MidActivation::Relu;
  bool mid_batch_norm = false;
  AttentionSwitches attention;
  bool temporal_flatten_units = true;
  std::size_t reduction = 16;
  std::vector<std::size_t> dilations{2, 3};
  std::size_t dilated_extent = 3;
  double dropout = 0.5;
  bool batch_norm = true;
  ad::BatchNormOptions bn;

  /// Intermediate width of the factorized pair.
  std::size_t width() const {
    return match_width(kernel[0], kernel[1], kernel[2], kernel[3], channels, channels);
  }
};

/// Residual block: split U from the batch, permute to (C, U, T, H, W),
/// factorized (or full) 4D convolution, temporal attention, permute back and
/// merge U, batch norm, ReLU, dropout, channel and spatio-temporal attention,
/// then add the block input.
///
/// Input and output are (B*U, C, T, H, W).
template <typename T>
class F4DBlock {
 public:
  F4DBlock() = default;
  F4DBlock(ParameterStore<T>& store, const std::string& name, const BlockConfig& cfg, Initializer& init)
      : name_(name), cfg_(cfg) {
    const auto& k = cfg.kernel;
    const std::size_t c = cfg.channels;
    if (cfg.conv == ConvKind::Factorized) {
      const std::size_t m = cfg.width();
      spatial_ = ConvLayer<T>(store, name + ".conv_spatial", kernel_shape(m, c, k[0], 1, k[2], k[3]), true, init);
      temporal_ = ConvLayer<T>(store, name + ".conv_temporal", kernel_shape(c, m, 1, k[1], 1, 1), true, init);
      if (cfg.mid_batch_norm) mid_bn_ = BatchNormLayer<T>(store, name + ".mid_bn", m, cfg.bn);
    } else {
      full_ = ConvLayer<T>(store, name + ".conv4d", kernel_shape(c, c, k[0], k[1], k[2], k[3]), true, init);
    }
    if (cfg.attention.temporal)
      ta_ = TemporalAttention<T>(store, name + ".ta", init, cfg.dilations, cfg.dilated_extent,
                                 cfg.temporal_flatten_units);
    if (cfg.batch_norm) bn_ = BatchNormLayer<T>(store, name + ".bn", c, cfg.bn);
    if (cfg.attention.channel) ca_ = ChannelAttention<T>(store, name + ".ca", c, cfg.reduction, init);
    if (cfg.attention.spatiotemporal)
      sta_ = SpatioTemporalAttention<T>(store, name + ".sta", init, cfg.dilations, cfg.dilated_extent);
  }

  const BlockConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }
  const ConvLayer<T>& spatial_conv() const { return spatial_; }
  const ConvLayer<T>& temporal_conv() const { return temporal_; }
  const ConvLayer<T>& full_conv() const { return full_; }
  const BatchNormLayer<T>& batch_norm() const { return bn_; }
  const TemporalAttention<T>& temporal_attention() const { return ta_; }
  const ChannelAttention<T>& channel_attention() const { return ca_; }
  const SpatioTemporalAttention<T>& spatiotemporal_attention() const { return sta_; }

  /// The 4D convolution stage alone, on a (B, C, U, T, H, W) tensor.
  Var conv4d(Graph<T>& g, Var x4) const {
    if (cfg_.conv == ConvKind::Full4D) return full_(g, x4);
    Var mid = spatial_(g, x4);
    if (cfg_.mid_batch_norm) mid = mid_bn_(g, mid);
    if (cfg_.mid_activation == MidActivation::Relu) mid = ad::relu(g, mid);
    return temporal_(g, mid);
  }

  Var operator()(Graph<T>& g, Var x) const {
    const auto in_shape = g.value(x).shape();
    const Shape expected{{Axis::B, in_shape.extent_or_one(Axis::B)},
                         {Axis::C, in_shape.extent_or_one(Axis::C)},
                         {Axis::T, in_shape.extent_or_one(Axis::T)},
                         {Axis::H, in_shape.extent_or_one(Axis::H)},
                         {Axis::W, in_shape.extent_or_one(Axis::W)}};
    if (!(in_shape == expected))
      throw ShapeError(name_ + ": expected merged-batch (B,C,T,H,W) input, got " + in_shape.str());
    if (in_shape.extent(Axis::C) != cfg_.channels)
      throw ShapeError(name_ + ": expected C=" + std::to_string(cfg_.channels) + ", got " + in_shape.str());

    Var y = ad::split_unit(g, x, cfg_.units);
    y = ad::permute(g, y, {Axis::U, Axis::C});
    y = conv4d(g, y);
    if (cfg_.attention.temporal) y = ta_(g, y);
    y = ad::permute(g, y, {Axis::C, Axis::U});
    y = ad::merge_unit(g, y);
    if (cfg_.batch_norm) y = bn_(g, y);
    y = ad::relu(g, y);
    y = ad::dropout(g, y, cfg_.dropout);
    if (cfg_.attention.channel) y = ca_(g, y);
    if (cfg_.attention.spatiotemporal) y = sta_(g, y);
    if (!(g.value(y).shape() == in_shape))
      throw std::logic_error(name_ + ": branch shape " + g.value(y).shape().str() +
                             " drifted from input " + in_shape.str());
    return ad::add(g, x, y);
  }

  void cost(CostRecorder& rec, const Shape& in) const {
    const auto b = in.extent(Axis::B);
    if (b % cfg_.units) throw ShapeError(name_ + ": batch not divisible by U");
    const Shape x4{{Axis::B, b / cfg_.units}, {Axis::C, in.extent(Axis::C)}, {Axis::U, cfg_.units},
                   {Axis::T, in.extent(Axis::T)}, {Axis::H, in.extent(Axis::H)}, {Axis::W, in.extent(Axis::W)}};
    Shape y;
    if (cfg_.conv == ConvKind::Full4D) {
      y = full_.cost(rec, x4);
    } else {
      auto mid = spatial_.cost(rec, x4);
      if (cfg_.mid_batch_norm) mid_bn_.cost(rec, mid);
      if (cfg_.mid_activation == MidActivation::Relu) rec.relu(name_ + ".mid_relu", mid);
      y = temporal_.cost(rec, mid);
    }
    if (cfg_.attention.temporal) ta_.cost(rec, y);
    if (cfg_.batch_norm) bn_.cost(rec, in);
    rec.relu(name_ + ".relu", in);
    if (cfg_.attention.channel) ca_.cost(rec, in);
    if (cfg_.attention.spatiotemporal) sta_.cost(rec, in);
    rec.elementwise(name_ + ".residual", "add", in.numel());
  }

 private:
  std::string name_;
  BlockConfig cfg_;
  ConvLayer<T> spatial_;
  ConvLayer<T> temporal_;
  ConvLayer<T> full_;
  BatchNormLayer<T> mid_bn_;
  BatchNormLayer<T> bn_;
  TemporalAttention<T> ta_;
  ChannelAttention<T> ca_;
  SpatioTemporalAttention<T> sta_;
};

}  // namespace f4d
