#pragma once

// Segment-based clip sampling. A video of N frames is split into U near-equal
// sections; one snippet of L frames is anchored in each section (uniformly at
// random in training, centered in testing) and T frames are taken from it at a
// fixed stride. Each result is an action unit (C, T, H, W).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "f4d/tensor.hpp"

namespace f4d {

enum class SampleMode { Train, Test };

struct SamplerConfig {
  std::size_t units = 4;
  std::size_t snippet = 32;
  std::size_t frames = 8;
  std::size_t stride = 4;
  SampleMode mode = SampleMode::Train;
  std::uint64_t seed = 0;

  void validate() const {
    if (units < 1) throw std::invalid_argument("sampler needs U >= 1");
    if (frames < 1 || stride < 1 || snippet < 1) throw std::invalid_argument("sampler extents must be >= 1");
    if ((frames - 1) * stride >= snippet)
      throw std::invalid_argument("(T-1)*stride = " + std::to_string((frames - 1) * stride) +
                                  " must be < snippet length " + std::to_string(snippet));
  }
};

/// A decoded video: frames laid out (T:N, C, H, W).
template <typename T>
struct RawVideo {
  std::string id;
  Tensor<T> frames;
  std::size_t label = 0;

  std::size_t frame_count() const { return frames.shape().extent(Axis::T); }
  std::size_t channels() const { return frames.shape().extent(Axis::C); }
  std::size_t height() const { return frames.shape().extent(Axis::H); }
  std::size_t width() const { return frames.shape().extent(Axis::W); }

  void validate() const {
    const auto& s = frames.shape();
    if (s.rank() != 4 || s[0].axis != Axis::T || s[1].axis != Axis::C || s[2].axis != Axis::H ||
        s[3].axis != Axis::W)
      throw ShapeError("video frames must be (T,C,H,W), got " + s.str());
  }
};

struct Section {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t length() const { return end - begin; }
};

/// Integer split of [0, n) into `units` sections; the first n mod units
/// sections are one frame longer.
inline std::vector<Section> split_sections(std::size_t n, std::size_t units) {
  if (units < 1) throw std::invalid_argument("units must be >= 1");
  std::vector<Section> out;
  const std::size_t base = n / units, extra = n % units;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < units; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    out.push_back({pos, pos + len});
    pos += len;
  }
  return out;
}

template <typename T>
struct ActionUnit {
  std::size_t section = 0;
  std::ptrdiff_t snippet_start = 0;          // before clamping
  std::vector<std::ptrdiff_t> raw_frames;    // before clamping
  std::vector<std::size_t> frames;           // clamped to [0, N-1]
  Tensor<T> clip;                            // (C, T, H, W)
};

/// Frame indices before clamping, for a snippet anchored at `start`.
inline std::vector<std::ptrdiff_t> snippet_frames(std::ptrdiff_t start, const SamplerConfig& cfg) {
  std::vector<std::ptrdiff_t> f;
  for (std::size_t k = 0; k < cfg.frames; ++k) f.push_back(start + static_cast<std::ptrdiff_t>(k * cfg.stride));
  return f;
}

/// Gather frames into a (C, T, H, W) clip.
template <typename T>
Tensor<T> gather_clip(const RawVideo<T>& v, const std::vector<std::size_t>& frames) {
  const std::size_t c = v.channels(), h = v.height(), w = v.width();
  const std::size_t plane = h * w;
  Tensor<T> clip(Shape{{Axis::C, c}, {Axis::T, frames.size()}, {Axis::H, h}, {Axis::W, w}});
  auto out = clip.mutable_data();
  auto in = v.frames.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const auto src = in.subspan((frames[t] * c + ch) * plane, plane);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>((ch * frames.size() + t) * plane));
    }
  return clip;
}

/// Owns the seeded generator used in training mode; not shareable across
/// workers.
class SegmentSampler {
 public:
  explicit SegmentSampler(SamplerConfig cfg) : cfg_(cfg), rng_(cfg.seed) { cfg_.validate(); }

  const SamplerConfig& config() const { return cfg_; }

  /// Snippet start (before clamping) for one section.
  std::ptrdiff_t snippet_start(const Section& s, std::size_t n) {
    const auto begin = static_cast<std::ptrdiff_t>(std::min(s.begin, n - 1));
    const auto len = static_cast<std::ptrdiff_t>(s.length());
    const auto snip = static_cast<std::ptrdiff_t>(cfg_.snippet);
    if (cfg_.mode == SampleMode::Test) return begin + len / 2 - snip / 2;
    const auto slack = std::max<std::ptrdiff_t>(0, len - snip);
    std::uniform_int_distribution<std::ptrdiff_t> d(0, slack);
    return begin + d(rng_);
  }

  template <typename T>
  std::vector<ActionUnit<T>> sample(const RawVideo<T>& v) {
    v.validate();
    const std::size_t n = v.frame_count();
    if (n < 1) throw std::invalid_argument("video has no frames");
    std::vector<ActionUnit<T>> out;
    const auto sections = split_sections(n, cfg_.units);
    for (std::size_t i = 0; i < sections.size(); ++i) {
      ActionUnit<T> a;
      a.section = i;
      a.snippet_start = snippet_start(sections[i], n);
      a.raw_frames = snippet_frames(a.snippet_start, cfg_);
      for (auto f : a.raw_frames)
        a.frames.push_back(static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(f, 0, static_cast<std::ptrdiff_t>(n) - 1)));
      a.clip = gather_clip(v, a.frames);
      out.push_back(std::move(a));
    }
    return out;
  }

 private:
  SamplerConfig cfg_;
  std::mt19937_64 rng_;
};

template <typename T>
std::vector<ActionUnit<T>> sample_action_units(const RawVideo<T>& v, const SamplerConfig& cfg) {
  SegmentSampler s(cfg);
  return s.sample(v);
}

/// Stack action units into (U, C, T, H, W).
template <typename T>
Tensor<T> stack_units(const std::vector<ActionUnit<T>>& units) {
  if (units.empty()) throw std::invalid_argument("no action units");
  const auto& s = units.front().clip.shape();
  std::vector<Dim> dims{{Axis::U, units.size()}};
  for (const auto& d : s.dims()) dims.push_back(d);
  std::vector<T> data;
  data.reserve(units.size() * s.numel());
  for (const auto& u : units) {
    if (!(u.clip.shape() == s)) throw ShapeError("action units differ in shape");
    data.insert(data.end(), u.clip.data().begin(), u.clip.data().end());
  }
  return Tensor<T>(Shape(std::move(dims)), std::move(data));
}

/// Bilinear resize of the trailing (H, W) axes, half-pixel centers.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const auto& s = x.shape();
  const auto r = s.rank();
  if (r < 2 || s[r - 2].axis != Axis::H || s[r - 1].axis != Axis::W)
    throw ShapeError("resize expects trailing (H,W), got " + s.str());
  if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be non-empty");
  const std::size_t ih = s[r - 2].extent, iw = s[r - 1].extent;
  Tensor<T> out(s.with_extent(Axis::H, out_h).with_extent(Axis::W, out_w));
  if (ih == out_h && iw == out_w) return x;
  const std::size_t planes = s.numel() / (ih * iw);
  auto src_coord = [](std::size_t o, std::size_t in, std::size_t outn) {
    const double c = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    return std::clamp(c, 0.0, static_cast<double>(in - 1));
  };
  auto in = x.data();
  auto po = out.mutable_data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < out_h; ++y) {
      const double sy = src_coord(y, ih, out_h);
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t y1 = std::min(y0 + 1, ih - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const double sx = src_coord(xx, iw, out_w);
        const auto x0 = static_cast<std::size_t>(std::floor(sx));
        const std::size_t x1 = std::min(x0 + 1, iw - 1);
        const double fx = sx - static_cast<double>(x0);
        const T* base = in.data() + p * ih * iw;
        const double v = (1 - fy) * ((1 - fx) * base[y0 * iw + x0] + fx * base[y0 * iw + x1]) +
                         fy * ((1 - fx) * base[y1 * iw + x0] + fx * base[y1 * iw + x1]);
        po[(p * out_h + y) * out_w + xx] = static_cast<T>(v);
      }
    }
  return out;
}

/// Crop [y0, y0+h) x [x0, x0+w) of the trailing (H, W) axes.
template <typename T>
Tensor<T> crop_hw(const Tensor<T>& x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  return slice(slice(x, Axis::H, y0, h), Axis::W, x0, w);
}

struct InferenceConfig {
  std::size_t units = 10;
  std::size_t crops = 3;
  std::size_t scale_side = 256;
  std::size_t crop_side = 256;
  std::size_t resize_side = 224;
  SamplerConfig sampler{10, 32, 8, 4, SampleMode::Test, 0};
};

template <typename T>
struct InferenceView {
  std::size_t unit = 0;
  std::size_t crop = 0;
  std::size_t origin_y = 0;  // in the rescaled frame
  std::size_t origin_x = 0;
  std::vector<std::size_t> frames;
  Tensor<T> clip;  // (C, T, resize, resize)
};

/// Evenly spaced crop origins along one side: 0, slack/2, slack for 3 crops.
inline std::vector<std::size_t> crop_origins(std::size_t side, std::size_t crop, std::size_t count) {
  if (crop > side) throw ShapeError("crop larger than frame");
  std::vector<std::size_t> o;
  const std::size_t slack = side - crop;
  for (std::size_t i = 0; i < count; ++i) o.push_back(count == 1 ? slack / 2 : slack * i / (count - 1));
  return o;
}

/// Fully-convolutional test views: U test-mode action units, shorter side
/// scaled to `scale_side`, `crops` square crops spread along the longer side,
/// each resized to `resize_side`.
template <typename T>
std::vector<InferenceView<T>> inference_views(const RawVideo<T>& v, InferenceConfig cfg = {}) {
  v.validate();
  if (v.frame_count() < 1 || v.height() < 1 || v.width() < 1) throw ShapeError("degenerate video");
  if (cfg.crops < 1 || cfg.crop_side < 1 || cfg.resize_side < 1) throw std::invalid_argument("degenerate view config");
  cfg.sampler.units = cfg.units;
  cfg.sampler.mode = SampleMode::Test;
  auto units = sample_action_units(v, cfg.sampler);

  const std::size_t h = v.height(), w = v.width();
  const bool tall = h > w;
  const std::size_t short_side = std::min(h, w), long_side = std::max(h, w);
  const auto scaled_long = static_cast<std::size_t>(
      std::llround(static_cast<double>(long_side) * static_cast<double>(cfg.scale_side) / static_cast<double>(short_side)));
  const std::size_t sh = tall ? scaled_long : cfg.scale_side;
  const std::size_t sw = tall ? cfg.scale_side : scaled_long;
  if (std::min(sh, sw) < cfg.crop_side) throw ShapeError("scaled frame smaller than crop");
  const auto origins = crop_origins(tall ? sh : sw, cfg.crop_side, cfg.crops);
  const std::size_t center_short = (cfg.scale_side - cfg.crop_side) / 2;

  std::vector<InferenceView<T>> views;
  for (std::size_t u = 0; u < units.size(); ++u) {
    auto scaled = resize_bilinear(units[u].clip, sh, sw);
    for (std::size_t c = 0; c < origins.size(); ++c) {
      InferenceView<T> view;
      view.unit = u;
      view.crop = c;
      view.origin_y = tall ? origins[c] : center_short;
      view.origin_x = tall ? center_short : origins[c];
      view.frames = units[u].frames;
      view.clip = resize_bilinear(crop_hw(scaled, view.origin_y, view.origin_x, cfg.crop_side, cfg.crop_side),
                                  cfg.resize_side, cfg.resize_side);
      views.push_back(std::move(view));
    }
  }
  return views;
}

/// Arithmetic mean of per-view class scores.
inline std::vector<double> aggregate_scores(const std::vector<std::vector<double>>& per_view) {
  if (per_view.empty()) throw std::invalid_argument("no views to aggregate");
  std::vector<double> mean(per_view.front().size(), 0.0);
  for (const auto& s : per_view) {
    if (s.size() != mean.size()) throw std::invalid_argument("views disagree on class count");
    for (std::size_t i = 0; i < s.size(); ++i) mean[i] += s[i];
  }
  for (auto& m : mean) m /= static_cast<double>(per_view.size());
  return mean;
}

}  // namespace f4d
