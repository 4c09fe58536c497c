#pragma once

// Scalar-loop reference implementations used as test oracles. They only read
// raw values and extents from library tensors; no library compute path is
// called from here.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "f4d/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double relu(double z) { return z > 0 ? z : 0.0; }

/// Dense row-major 6-D array (N, C, U, T, H, W).
struct Arr6 {
  std::array<std::size_t, 6> e{1, 1, 1, 1, 1, 1};
  Vec v;

  Arr6() = default;
  explicit Arr6(std::array<std::size_t, 6> ext, double fill = 0.0) : e(ext) {
    v.assign(e[0] * e[1] * e[2] * e[3] * e[4] * e[5], fill);
  }
  std::size_t idx(std::size_t n, std::size_t c, std::size_t u, std::size_t t, std::size_t h, std::size_t w) const {
    return ((((n * e[1] + c) * e[2] + u) * e[3] + t) * e[4] + h) * e[5] + w;
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t u, std::size_t t, std::size_t h, std::size_t w) {
    return v[idx(n, c, u, t, h, w)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t u, std::size_t t, std::size_t h,
                    std::size_t w) const {
    return v[idx(n, c, u, t, h, w)];
  }
  /// Zero outside the array.
  double get(long n, long c, long u, long t, long h, long w) const {
    const long ext[6] = {long(e[0]), long(e[1]), long(e[2]), long(e[3]), long(e[4]), long(e[5])};
    const long at[6] = {n, c, u, t, h, w};
    for (int i = 0; i < 6; ++i)
      if (at[i] < 0 || at[i] >= ext[i]) return 0.0;
    return v[idx(std::size_t(n), std::size_t(c), std::size_t(u), std::size_t(t), std::size_t(h), std::size_t(w))];
  }
};

/// Lift a tensor laid out as [B] C [U] [T] [H] [W] into (N, C, U, T, H, W).
inline Arr6 lift(const f4d::Tensor<double>& x) {
  using f4d::Axis;
  const auto& s = x.shape();
  Arr6 a({s.extent_or_one(Axis::B), s.extent_or_one(Axis::C), s.extent_or_one(Axis::U), s.extent_or_one(Axis::T),
          s.extent_or_one(Axis::H), s.extent_or_one(Axis::W)});
  a.v.assign(x.values().begin(), x.values().end());
  return a;
}

/// Kernel (O, C, U, T, H, W) with the same lift.
inline Arr6 lift_kernel(const f4d::Tensor<double>& w) {
  using f4d::Axis;
  const auto& s = w.shape();
  Arr6 a({s.extent_or_one(Axis::O), s.extent_or_one(Axis::C), s.extent_or_one(Axis::U), s.extent_or_one(Axis::T),
          s.extent_or_one(Axis::H), s.extent_or_one(Axis::W)});
  a.v.assign(w.values().begin(), w.values().end());
  return a;
}

/// Quintuple-loop 4D convolution, stride 1. `same[a]` selects zero padding
/// that keeps the extent (low pad = dilation*(k-1)/2); otherwise valid.
inline Arr6 conv4d(const Arr6& x, const Arr6& k, const Vec& bias, std::array<std::size_t, 4> dil = {1, 1, 1, 1},
                   std::array<bool, 4> same = {true, true, true, true}) {
  std::array<std::size_t, 4> out{};
  std::array<long, 4> pad{};
  for (int a = 0; a < 4; ++a) {
    const std::size_t span = dil[a] * (k.e[2 + a] - 1);
    pad[a] = same[a] ? long(span / 2) : 0;
    out[a] = same[a] ? x.e[2 + a] : x.e[2 + a] - span;
  }
  Arr6 y({x.e[0], k.e[0], out[0], out[1], out[2], out[3]});
  for (std::size_t n = 0; n < x.e[0]; ++n)
    for (std::size_t o = 0; o < k.e[0]; ++o)
      for (std::size_t u = 0; u < out[0]; ++u)
        for (std::size_t t = 0; t < out[1]; ++t)
          for (std::size_t h = 0; h < out[2]; ++h)
            for (std::size_t w = 0; w < out[3]; ++w) {
              double acc = bias.empty() ? 0.0 : bias[o];
              for (std::size_t c = 0; c < k.e[1]; ++c)
                for (std::size_t s = 0; s < k.e[2]; ++s)
                  for (std::size_t p = 0; p < k.e[3]; ++p)
                    for (std::size_t q = 0; q < k.e[4]; ++q)
                      for (std::size_t r = 0; r < k.e[5]; ++r)
                        acc += k(o, c, s, p, q, r) * x.get(long(n), long(c), long(u + s * dil[0]) - pad[0],
                                                           long(t + p * dil[1]) - pad[1],
                                                           long(h + q * dil[2]) - pad[2],
                                                           long(w + r * dil[3]) - pad[3]);
              y(n, o, u, t, h, w) = acc;
            }
  return y;
}

/// 1-D same-padded multi-path dilated convolution of a single sequence.
/// taps[p][k] are path weights; one shared bias.
inline Vec dilated1d(const Vec& s, const std::vector<Vec>& taps, const std::vector<std::size_t>& dil, double bias) {
  Vec out(s.size(), bias);
  for (std::size_t p = 0; p < taps.size(); ++p) {
    const long K = long(taps[p].size()), d = long(dil[p]), pad = d * (K - 1) / 2;
    for (long i = 0; i < long(s.size()); ++i)
      for (long k = 0; k < K; ++k) {
        const long j = i + k * d - pad;
        if (j >= 0 && j < long(s.size())) out[std::size_t(i)] += taps[p][std::size_t(k)] * s[std::size_t(j)];
      }
  }
  return out;
}

/// Parameters of a multi-path dilated conv, flattened per path as
/// (O, C, K) for 1D or (O, C, K, K) for 2D.
struct Dilated {
  std::vector<Vec> paths;
  Vec bias;
  std::vector<std::size_t> dil{2, 3};
  std::size_t K = 3;
  std::size_t in = 1;
  std::size_t out = 1;
};

/// Temporal attention on x (N, C, U, T, H, W) with the time axis flattened
/// to U*T within each N.
inline Arr6 temporal_attention(const Arr6& x, const Dilated& cv, Arr6* map_out = nullptr) {
  const auto [N, C, U, T, H, W] = x.e;
  Arr6 y = x;
  Arr6 m({N, 1, U, T, 1, 1});
  for (std::size_t n = 0; n < N; ++n) {
    Vec seq(U * T);
    for (std::size_t u = 0; u < U; ++u)
      for (std::size_t t = 0; t < T; ++t) {
        double sum = 0, mx = -INFINITY;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
              sum += x(n, c, u, t, h, w);
              mx = std::max(mx, x(n, c, u, t, h, w));
            }
        seq[u * T + t] = sum / double(C * H * W) + mx;
      }
    std::vector<Vec> taps;
    for (const auto& p : cv.paths) taps.push_back(p);  // (1,1,K)
    const Vec logits = dilated1d(seq, taps, cv.dil, cv.bias[0]);
    for (std::size_t u = 0; u < U; ++u)
      for (std::size_t t = 0; t < T; ++t) {
        const double a = sigmoid(logits[u * T + t]);
        m(n, 0, u, t, 0, 0) = a;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) y(n, c, u, t, h, w) = x(n, c, u, t, h, w) * a + x(n, c, u, t, h, w);
      }
  }
  if (map_out) *map_out = m;
  return y;
}

/// Channel attention on x (N, C, 1, T, H, W). w0 is (hidden, C), w1 is
/// (C, hidden), both row-major, no biases.
inline Arr6 channel_attention(const Arr6& x, const Vec& w0, const Vec& w1, std::size_t hidden,
                              Arr6* map_out = nullptr) {
  const auto [N, C, U, T, H, W] = x.e;
  Arr6 y = x;
  Arr6 m({N, C, 1, 1, 1, 1});
  auto mlp = [&](const Vec& d) {
    Vec hdn(hidden, 0.0), o(C, 0.0);
    for (std::size_t j = 0; j < hidden; ++j) {
      for (std::size_t c = 0; c < C; ++c) hdn[j] += w0[j * C + c] * d[c];
      hdn[j] = relu(hdn[j]);
    }
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < hidden; ++j) o[c] += w1[c * hidden + j] * hdn[j];
    return o;
  };
  for (std::size_t n = 0; n < N; ++n) {
    Vec avg(C, 0.0), mx(C, -INFINITY);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
              avg[c] += x(n, c, u, t, h, w) / double(U * T * H * W);
              mx[c] = std::max(mx[c], x(n, c, u, t, h, w));
            }
    const Vec a = mlp(avg), b = mlp(mx);
    for (std::size_t c = 0; c < C; ++c) {
      const double g = sigmoid(a[c] + b[c]);
      m(n, c, 0, 0, 0, 0) = g;
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) y(n, c, u, t, h, w) = x(n, c, u, t, h, w) * g + x(n, c, u, t, h, w);
    }
  }
  if (map_out) *map_out = m;
  return y;
}

/// Spatio-temporal attention on x (N, C, 1, T, H, W). `sp` is a 2 -> 2
/// dilated 2D conv with path weights (O:2, C:2, K, K); `tm` is a 2 -> 1
/// dilated 1D conv over T with path weights (O:1, C:2, K).
inline Arr6 spatiotemporal_attention(const Arr6& x, const Dilated& sp, const Dilated& tm, Arr6* map_out = nullptr) {
  const auto [N, C, U, T, H, W] = x.e;
  Arr6 pooled({N, 2, 1, T, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          double sum = 0, mx = -INFINITY;
          for (std::size_t c = 0; c < C; ++c) {
            sum += x(n, c, 0, t, h, w);
            mx = std::max(mx, x(n, c, 0, t, h, w));
          }
          pooled(n, 0, 0, t, h, w) = sum / double(C);
          pooled(n, 1, 0, t, h, w) = mx;
        }
  Arr6 hid({N, 2, 1, T, H, W});
  const long K = long(sp.K);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            double acc = sp.bias[o];
            for (std::size_t p = 0; p < sp.paths.size(); ++p) {
              const long d = long(sp.dil[p]), pad = d * (K - 1) / 2;
              for (std::size_t c = 0; c < 2; ++c)
                for (long q = 0; q < K; ++q)
                  for (long r = 0; r < K; ++r)
                    acc += sp.paths[p][((o * 2 + c) * std::size_t(K) + std::size_t(q)) * std::size_t(K) + std::size_t(r)] *
                           pooled.get(long(n), long(c), 0, long(t), long(h) + q * d - pad, long(w) + r * d - pad);
            }
            hid(n, o, 0, t, h, w) = relu(acc);
          }
  Arr6 y = x;
  Arr6 m({N, 1, 1, T, H, W});
  const long Kt = long(tm.K);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          double acc = tm.bias[0];
          for (std::size_t p = 0; p < tm.paths.size(); ++p) {
            const long d = long(tm.dil[p]), pad = d * (Kt - 1) / 2;
            for (std::size_t c = 0; c < 2; ++c)
              for (long k = 0; k < Kt; ++k)
                acc += tm.paths[p][c * std::size_t(Kt) + std::size_t(k)] *
                       hid.get(long(n), long(c), 0, long(t) + k * d - pad, long(h), long(w));
          }
          const double a = sigmoid(acc);
          m(n, 0, 0, t, h, w) = a;
          for (std::size_t c = 0; c < C; ++c) y(n, c, 0, t, h, w) = x(n, c, 0, t, h, w) * a + x(n, c, 0, t, h, w);
        }
  if (map_out) *map_out = m;
  return y;
}

/// Eval-mode batch norm per channel of (N, C, ...).
inline Arr6 batch_norm_eval(const Arr6& x, const Vec& mean, const Vec& var, const Vec& gamma, const Vec& beta,
                            double eps) {
  Arr6 y = x;
  const std::size_t inner = x.e[2] * x.e[3] * x.e[4] * x.e[5];
  for (std::size_t n = 0; n < x.e[0]; ++n)
    for (std::size_t c = 0; c < x.e[1]; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        auto& v = y.v[(n * x.e[1] + c) * inner + i];
        v = (v - mean[c]) / std::sqrt(var[c] + eps) * gamma[c] + beta[c];
      }
  return y;
}

/// (N*U, C, 1, T, H, W) -> (N, C, U, T, H, W).
inline Arr6 to_units(const Arr6& x, std::size_t U) {
  const std::size_t N = x.e[0] / U;
  Arr6 y({N, x.e[1], U, x.e[3], x.e[4], x.e[5]});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t u = 0; u < U; ++u)
      for (std::size_t c = 0; c < x.e[1]; ++c)
        for (std::size_t t = 0; t < x.e[3]; ++t)
          for (std::size_t h = 0; h < x.e[4]; ++h)
            for (std::size_t w = 0; w < x.e[5]; ++w) y(n, c, u, t, h, w) = x(n * U + u, c, 0, t, h, w);
  return y;
}

inline Arr6 from_units(const Arr6& y) {
  const auto [N, C, U, T, H, W] = y.e;
  Arr6 x({N * U, C, 1, T, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t u = 0; u < U; ++u)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) x(n * U + u, c, 0, t, h, w) = y(n, c, u, t, h, w);
  return x;
}

inline double max_rel(const Vec& a, const Vec& ref) {
  double scale = 1e-30, diff = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    scale = std::max(scale, std::abs(ref[i]));
    diff = std::max(diff, std::abs(a[i] - ref[i]));
  }
  return diff / scale;
}

/// Hand count of the 4D conv MACs at stride 1: output sites x kernel volume
/// x C_in x C_out.
inline std::uint64_t conv_macs(std::uint64_t out_sites, std::uint64_t kvol, std::uint64_t cin, std::uint64_t cout) {
  return out_sites * kvol * cin * cout;
}

}  // namespace oracle
