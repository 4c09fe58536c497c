#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "f4d/tensor.hpp"

namespace f4d {

enum class Padding { Valid, Same };

/// The four convolved axes, in storage order.
inline constexpr std::array<Axis, 4> kConvAxes{Axis::U, Axis::T, Axis::H, Axis::W};

/// Per-axis options over (U, T, H, W). Stride is always 1.
struct ConvOptions {
  std::array<std::size_t, 4> dilation{1, 1, 1, 1};
  std::array<Padding, 4> padding{Padding::Same, Padding::Same, Padding::Same, Padding::Same};

  static ConvOptions valid() {
    ConvOptions o;
    o.padding.fill(Padding::Valid);
    return o;
  }
  static ConvOptions same() { return {}; }
};

/// Resolved extents of one convolution. Input is laid out (N, C_in, U, T, H, W)
/// where any of N, U, T, H, W may be absent from the named shape (extent 1).
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::array<std::size_t, 4> in{};
  std::array<std::size_t, 4> kernel{};
  std::array<std::size_t, 4> dilation{};
  std::array<std::size_t, 4> pad_lo{};
  std::array<std::size_t, 4> out{};
  Shape out_shape;

  std::size_t in_plane() const { return in[0] * in[1] * in[2] * in[3]; }
  std::size_t out_plane() const { return out[0] * out[1] * out[2] * out[3]; }
  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2] * kernel[3]; }
  std::size_t macs() const { return batch * out_plane() * kernel_volume() * in_ch * out_ch; }

  /// Validates that `x` has canonical layout [B] C [U] [T] [H] [W] and that
  /// `w` is (O, C, U, T, H, W).
  static ConvGeometry make(const Shape& x, const Shape& w, const ConvOptions& opt) {
    static constexpr std::array<Axis, 6> kInputOrder{Axis::B, Axis::C, Axis::U,
                                                     Axis::T, Axis::H, Axis::W};
    std::size_t pos = 0;
    for (const auto& d : x.dims()) {
      while (pos < kInputOrder.size() && kInputOrder[pos] != d.axis) ++pos;
      if (pos == kInputOrder.size())
        throw ShapeError("conv input must follow [B] C [U] [T] [H] [W] order, got " + x.str());
    }
    if (!x.has(Axis::C)) throw ShapeError("conv input lacks a C axis: " + x.str());
    const Shape expected_w{{Axis::O, w.extent_or_one(Axis::O)}, {Axis::C, w.extent_or_one(Axis::C)},
                           {Axis::U, w.extent_or_one(Axis::U)}, {Axis::T, w.extent_or_one(Axis::T)},
                           {Axis::H, w.extent_or_one(Axis::H)}, {Axis::W, w.extent_or_one(Axis::W)}};
    if (!(w == expected_w)) throw ShapeError("conv weight must be (O,C,U,T,H,W), got " + w.str());

    ConvGeometry g;
    g.batch = x.extent_or_one(Axis::B);
    g.in_ch = x.extent(Axis::C);
    g.out_ch = w.extent(Axis::O);
    if (w.extent(Axis::C) != g.in_ch)
      throw ShapeError("channel mismatch: input " + x.str() + " vs weight " + w.str());
    auto out_dims = x.dims();
    for (std::size_t a = 0; a < 4; ++a) {
      const Axis axis = kConvAxes[a];
      g.in[a] = x.extent_or_one(axis);
      g.kernel[a] = w.extent(axis);
      g.dilation[a] = opt.dilation[a];
      if (g.dilation[a] < 1) throw ShapeError("dilation must be >= 1");
      if (!x.has(axis) && g.kernel[a] != 1)
        throw ShapeError("kernel spans axis '" + axis_name(axis) + "' absent from input " + x.str());
      const std::size_t span = g.dilation[a] * (g.kernel[a] - 1);
      if (opt.padding[a] == Padding::Same) {
        g.pad_lo[a] = span / 2;
        g.out[a] = g.in[a];
      } else {
        if (span + 1 > g.in[a])
          throw ShapeError("kernel larger than input on axis '" + axis_name(axis) + "'");
        g.pad_lo[a] = 0;
        g.out[a] = g.in[a] - span;
      }
    }
    for (auto& d : out_dims) {
      if (d.axis == Axis::C) d.extent = g.out_ch;
      for (std::size_t a = 0; a < 4; ++a)
        if (d.axis == kConvAxes[a]) d.extent = g.out[a];
    }
    g.out_shape = Shape(std::move(out_dims));
    return g;
  }
};

namespace detail {

struct TapRange {
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive; lo >= hi means empty
  std::ptrdiff_t shift = 0;  // input index = output index + shift
};

inline TapRange tap_range(std::size_t in, std::size_t out, std::size_t k, std::size_t dil,
                          std::size_t pad_lo) {
  const auto shift = static_cast<std::ptrdiff_t>(k * dil) - static_cast<std::ptrdiff_t>(pad_lo);
  const auto lo = std::max<std::ptrdiff_t>(0, -shift);
  const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out),
                                           static_cast<std::ptrdiff_t>(in) - shift);
  TapRange r;
  r.shift = shift;
  r.lo = static_cast<std::size_t>(lo);
  r.hi = hi > lo ? static_cast<std::size_t>(hi) : r.lo;
  return r;
}

/// Enumerate the contiguous W-rows touched by one 3D (T,H,W) kernel slab:
/// fn(in_offset, out_offset, length, tap_index) with offsets relative to the
/// (T,H,W) planes.
template <typename Fn>
void for_each_slab_row(const ConvGeometry& g, Fn&& fn) {
  const std::size_t IH = g.in[2], IW = g.in[3];
  const std::size_t OH = g.out[2], OW = g.out[3];
  std::size_t tap = 0;
  for (std::size_t p = 0; p < g.kernel[1]; ++p) {
    const auto rt = tap_range(g.in[1], g.out[1], p, g.dilation[1], g.pad_lo[1]);
    for (std::size_t q = 0; q < g.kernel[2]; ++q) {
      const auto rh = tap_range(g.in[2], g.out[2], q, g.dilation[2], g.pad_lo[2]);
      for (std::size_t r = 0; r < g.kernel[3]; ++r, ++tap) {
        const auto rw = tap_range(g.in[3], g.out[3], r, g.dilation[3], g.pad_lo[3]);
        if (rw.lo >= rw.hi) continue;
        const std::size_t len = rw.hi - rw.lo;
        for (std::size_t t = rt.lo; t < rt.hi; ++t) {
          const std::size_t ti = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t) + rt.shift);
          for (std::size_t h = rh.lo; h < rh.hi; ++h) {
            const std::size_t hi = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(h) + rh.shift);
            const std::size_t wi = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(rw.lo) + rw.shift);
            fn((ti * IH + hi) * IW + wi, (t * OH + h) * OW + rw.lo, len, tap);
          }
        }
      }
    }
  }
}

/// Enumerate (n, o, c, s, u) plane pairs: fn(in_plane_offset, out_plane_offset,
/// weight_slab_offset).
template <typename Fn>
void for_each_plane(const ConvGeometry& g, Fn&& fn) {
  const std::size_t in3 = g.in[1] * g.in[2] * g.in[3];
  const std::size_t out3 = g.out[1] * g.out[2] * g.out[3];
  const std::size_t slab = g.kernel[1] * g.kernel[2] * g.kernel[3];
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_ch; ++o)
      for (std::size_t c = 0; c < g.in_ch; ++c)
        for (std::size_t s = 0; s < g.kernel[0]; ++s) {
          const auto ru = tap_range(g.in[0], g.out[0], s, g.dilation[0], g.pad_lo[0]);
          const std::size_t wslab = ((o * g.in_ch + c) * g.kernel[0] + s) * slab;
          for (std::size_t u = ru.lo; u < ru.hi; ++u) {
            const std::size_t ui = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(u) + ru.shift);
            fn(((n * g.in_ch + c) * g.in[0] + ui) * in3, ((n * g.out_ch + o) * g.out[0] + u) * out3,
               wslab);
          }
        }
}

}  // namespace detail

/// One 3D (T,H,W) convolution of a single input plane with a single kernel
/// slab, accumulated into an output plane.
template <typename T>
void conv3d_slab_accumulate(const ConvGeometry& g, const T* x_plane, const T* w_slab, T* y_plane) {
  detail::for_each_slab_row(g, [&](std::size_t xi, std::size_t yi, std::size_t len, std::size_t tap) {
    const T wv = w_slab[tap];
    const T* xp = x_plane + xi;
    T* yp = y_plane + yi;
    for (std::size_t i = 0; i < len; ++i) yp[i] += wv * xp[i];
  });
}

/// Forward convolution as a sum over U-offsets of 3D convolutions. Output is
/// overwritten; bias is not applied.
template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  std::fill(y.begin(), y.end(), T(0));
  detail::for_each_plane(g, [&](std::size_t xo, std::size_t yo, std::size_t wo) {
    conv3d_slab_accumulate(g, x.data() + xo, w.data() + wo, y.data() + yo);
  });
}

/// dx += conv^T(dy, w)
template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                         std::span<T> dx) {
  detail::for_each_plane(g, [&](std::size_t xo, std::size_t yo, std::size_t wo) {
    const T* wp = w.data() + wo;
    T* dxp = dx.data() + xo;
    const T* dyp = dy.data() + yo;
    detail::for_each_slab_row(g, [&](std::size_t xi, std::size_t yi, std::size_t len, std::size_t tap) {
      const T wv = wp[tap];
      for (std::size_t i = 0; i < len; ++i) dxp[xi + i] += wv * dyp[yi + i];
    });
  });
}

/// dw += correlation(x, dy)
template <typename T>
void conv_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x,
                          std::span<T> dw) {
  detail::for_each_plane(g, [&](std::size_t xo, std::size_t yo, std::size_t wo) {
    T* dwp = dw.data() + wo;
    const T* xp = x.data() + xo;
    const T* dyp = dy.data() + yo;
    detail::for_each_slab_row(g, [&](std::size_t xi, std::size_t yi, std::size_t len, std::size_t tap) {
      T acc = 0;
      for (std::size_t i = 0; i < len; ++i) acc += dyp[yi + i] * xp[xi + i];
      dwp[tap] += acc;
    });
  });
}

/// Adds bias (O) along the channel axis of a conv output.
template <typename T>
void add_channel_bias(const ConvGeometry& g, std::span<const T> bias, std::span<T> y) {
  const std::size_t plane = g.out_plane();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      T* yp = y.data() + (n * g.out_ch + o) * plane;
      for (std::size_t i = 0; i < plane; ++i) yp[i] += bias[o];
    }
}

/// Full 4D kernel: weight (O:N_out, C:C_in, U:S, T:P, H:Q, W:R), bias (O:N_out).
template <typename T>
struct Kernel4D {
  Tensor<T> weight;
  Tensor<T> bias;
  ConvOptions options;

  std::size_t param_count() const { return weight.size() + bias.size(); }
};

inline Shape kernel_shape(std::size_t out, std::size_t in, std::size_t s, std::size_t p,
                          std::size_t q, std::size_t r) {
  return Shape{{Axis::O, out}, {Axis::C, in}, {Axis::U, s}, {Axis::T, p}, {Axis::H, q}, {Axis::W, r}};
}

inline Shape bias_shape(std::size_t out) { return Shape{{Axis::O, out}}; }

namespace detail {
template <typename T>
void check_bias_shape(const Tensor<T>& b, std::size_t out) {
  if (!(b.shape() == bias_shape(out)))
    throw ShapeError("bias must be (O:" + std::to_string(out) + "), got " + b.shape().str());
}
}  // namespace detail

/// Literal nested-sum 4D convolution. Slow; used as the reference path.
template <typename T>
Tensor<T> conv4d_direct(const Tensor<T>& v, const Kernel4D<T>& k) {
  const auto g = ConvGeometry::make(v.shape(), k.weight.shape(), k.options);
  detail::check_bias_shape(k.bias, g.out_ch);
  Tensor<T> out(g.out_shape);
  auto x = v.data();
  auto w = k.weight.data();
  auto y = out.mutable_data();
  const auto& I = g.in;
  const auto& K = g.kernel;
  const auto& O = g.out;
  auto in_at = [&](std::size_t n, std::size_t c, std::size_t u, std::size_t t, std::size_t h,
                   std::size_t ww) {
    return x[((((n * g.in_ch + c) * I[0] + u) * I[1] + t) * I[2] + h) * I[3] + ww];
  };
  auto inside = [](std::ptrdiff_t i, std::size_t extent) {
    return i >= 0 && i < static_cast<std::ptrdiff_t>(extent);
  };
  auto off = [&](std::size_t pos, std::size_t tap, std::size_t a) {
    return static_cast<std::ptrdiff_t>(pos + tap * g.dilation[a]) -
           static_cast<std::ptrdiff_t>(g.pad_lo[a]);
  };
  std::size_t yi = 0;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t j = 0; j < g.out_ch; ++j)
      for (std::size_t u = 0; u < O[0]; ++u)
        for (std::size_t t = 0; t < O[1]; ++t)
          for (std::size_t h = 0; h < O[2]; ++h)
            for (std::size_t ww = 0; ww < O[3]; ++ww, ++yi) {
              T acc = k.bias[j];
              for (std::size_t c = 0; c < g.in_ch; ++c)
                for (std::size_t s = 0; s < K[0]; ++s)
                  for (std::size_t p = 0; p < K[1]; ++p)
                    for (std::size_t q = 0; q < K[2]; ++q)
                      for (std::size_t r = 0; r < K[3]; ++r) {
                        const auto iu = off(u, s, 0), it = off(t, p, 1), ih = off(h, q, 2),
                                   iw = off(ww, r, 3);
                        if (!inside(iu, I[0]) || !inside(it, I[1]) || !inside(ih, I[2]) ||
                            !inside(iw, I[3]))
                          continue;
                        const T wv = w[((((j * g.in_ch + c) * K[0] + s) * K[1] + p) * K[2] + q) * K[3] + r];
                        acc += wv * in_at(n, c, static_cast<std::size_t>(iu), static_cast<std::size_t>(it),
                                          static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
                      }
              y[yi] = acc;
            }
  return out;
}

/// 4D convolution computed as a sum of shifted 3D convolutions, one per
/// kernel offset along U. This is the production path.
template <typename T>
Tensor<T> conv4d_via_3d(const Tensor<T>& v, const Kernel4D<T>& k) {
  const auto g = ConvGeometry::make(v.shape(), k.weight.shape(), k.options);
  detail::check_bias_shape(k.bias, g.out_ch);
  Tensor<T> out(g.out_shape);
  conv_forward<T>(g, v.data(), k.weight.data(), out.mutable_data());
  add_channel_bias<T>(g, k.bias.data(), out.mutable_data());
  return out;
}

/// Intermediate width that matches a (3+1)D pair's weight count to a full
/// u x t x h x w kernel: floor(u t h w Np No / (u h w Np + t No)), at least 1.
inline std::size_t match_width(std::size_t u, std::size_t t, std::size_t h, std::size_t w,
                               std::size_t n_prev, std::size_t n_out) {
  const std::uint64_t num = std::uint64_t{u} * t * h * w * n_prev * n_out;
  const std::uint64_t den = std::uint64_t{u} * h * w * n_prev + std::uint64_t{t} * n_out;
  return static_cast<std::size_t>(std::max<std::uint64_t>(1, num / den));
}

/// Weight counts of the full kernel and its width-matched factorization.
struct WidthMatch {
  std::uint64_t numerator = 0;    // u t h w Np No: full 4D weights
  std::uint64_t denominator = 0;  // u h w Np + t No: factorized weights per unit width
  std::size_t width = 0;

  std::uint64_t full_weights() const { return numerator; }
  std::uint64_t factorized_weights() const { return denominator * width; }
};

inline WidthMatch width_match(std::size_t u, std::size_t t, std::size_t h, std::size_t w,
                              std::size_t n_prev, std::size_t n_out) {
  WidthMatch m;
  m.numerator = std::uint64_t{u} * t * h * w * n_prev * n_out;
  m.denominator = std::uint64_t{u} * h * w * n_prev + std::uint64_t{t} * n_out;
  m.width = match_width(u, t, h, w, n_prev, n_out);
  return m;
}

enum class MidActivation { None, Relu };

/// (3+1)D pair: clip-spatial kernel (O:M, C:C_in, U:S, T:1, H:Q, W:R) followed
/// by an intra-clip temporal kernel (O:N_out, C:M, U:1, T:P, H:1, W:1).
template <typename T>
struct FactorizedKernel {
  Tensor<T> spatial_weight;
  Tensor<T> spatial_bias;
  Tensor<T> temporal_weight;
  Tensor<T> temporal_bias;
  ConvOptions options;

  std::size_t width() const { return spatial_weight.shape().extent(Axis::O); }
  std::size_t param_count() const {
    return spatial_weight.size() + spatial_bias.size() + temporal_weight.size() + temporal_bias.size();
  }
  ConvOptions spatial_options() const {
    auto o = options;
    o.dilation[1] = 1;
    return o;
  }
  ConvOptions temporal_options() const {
    auto o = options;
    o.dilation[0] = o.dilation[2] = o.dilation[3] = 1;
    return o;
  }
};

template <typename T>
Tensor<T> conv_factorized(const Tensor<T>& v, const FactorizedKernel<T>& fk, MidActivation mid) {
  const auto& sw = fk.spatial_weight.shape();
  const auto& tw = fk.temporal_weight.shape();
  if (sw.extent_or_one(Axis::T) != 1)
    throw ShapeError("spatial part must have T extent 1, got " + sw.str());
  if (tw.extent_or_one(Axis::U) != 1 || tw.extent_or_one(Axis::H) != 1 || tw.extent_or_one(Axis::W) != 1)
    throw ShapeError("temporal part must be 1 x t x 1 x 1, got " + tw.str());
  Kernel4D<T> spatial{fk.spatial_weight, fk.spatial_bias, fk.spatial_options()};
  auto mid_out = conv4d_via_3d(v, spatial);
  if (mid == MidActivation::Relu) mid_out = map(mid_out, [](T a) { return a > T(0) ? a : T(0); });
  Kernel4D<T> temporal{fk.temporal_weight, fk.temporal_bias, fk.temporal_options()};
  return conv4d_via_3d(mid_out, temporal);
}

enum class DilatedRank { Temporal1D, Spatial2D };

/// Multi-path dilated convolution: every path is a same-padded convolution
/// with its own dilation; path outputs are summed and one shared bias added.
struct DilatedConvSpec {
  DilatedRank rank = DilatedRank::Temporal1D;
  std::vector<std::size_t> dilations{2, 3};
  std::size_t extent = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  Shape path_weight_shape() const {
    return rank == DilatedRank::Temporal1D
               ? kernel_shape(out_channels, in_channels, 1, extent, 1, 1)
               : kernel_shape(out_channels, in_channels, 1, 1, extent, extent);
  }

  ConvOptions path_options(std::size_t path) const {
    ConvOptions o;
    const auto d = dilations.at(path);
    if (rank == DilatedRank::Temporal1D)
      o.dilation = {1, d, 1, 1};
    else
      o.dilation = {1, 1, d, d};
    return o;
  }
};

template <typename T>
struct DilatedConvWeights {
  std::vector<Tensor<T>> paths;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> conv_dilated(const Tensor<T>& x, const DilatedConvSpec& spec, const DilatedConvWeights<T>& wts) {
  if (wts.paths.size() != spec.dilations.size()) throw ShapeError("path count mismatch");
  if (x.shape().extent(Axis::C) != spec.in_channels)
    throw ShapeError("dilated conv expects " + std::to_string(spec.in_channels) +
                     " input channels, got " + x.shape().str());
  Tensor<T> sum;
  for (std::size_t p = 0; p < wts.paths.size(); ++p) {
    if (!(wts.paths[p].shape() == spec.path_weight_shape()))
      throw ShapeError("path weight shape mismatch: " + wts.paths[p].shape().str());
    const auto g = ConvGeometry::make(x.shape(), wts.paths[p].shape(), spec.path_options(p));
    Tensor<T> y(g.out_shape);
    conv_forward<T>(g, x.data(), wts.paths[p].data(), y.mutable_data());
    sum = p == 0 ? std::move(y) : add(sum, y);
  }
  const auto g = ConvGeometry::make(x.shape(), spec.path_weight_shape(), spec.path_options(0));
  detail::check_bias_shape(wts.bias, spec.out_channels);
  add_channel_bias<T>(g, wts.bias.data(), sum.mutable_data());
  return sum;
}

}  // namespace f4d
