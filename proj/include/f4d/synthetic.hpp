#pragma once

// Moving-blob videos whose label is carried only by temporal order. Classes
// come in time-reversed pairs (2k, 2k+1): the odd class replays the even
// class's frames backwards, so the multiset of frames cannot tell them apart.
//
//   kind 0/1  blob moving right / left
//   kind 2/3  blob moving down / up
//   kind 4/5  right-then-down / up-then-left
//   kind 6/7  down-then-right / left-then-up

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "f4d/sampling.hpp"
#include "f4d/tensor_io.hpp"

namespace f4d {

struct SyntheticConfig {
  std::size_t classes = 2;
  std::size_t per_class = 16;
  std::size_t frames = 32;
  std::size_t channels = 1;
  std::size_t height = 8;
  std::size_t width = 8;
  double blob_sigma = 1.0;
  double noise = 0.05;
  std::uint64_t seed = 0;

  static constexpr std::size_t kMaxClasses = 8;
};

inline const char* motion_kind_name(std::size_t c) {
  static const char* names[] = {"right", "left", "down", "up", "right_then_down", "up_then_left", "down_then_right",
                                "left_then_up"};
  return c < SyntheticConfig::kMaxClasses ? names[c] : "?";
}

namespace detail {

struct Waypoints {
  double y0, x0, y1, x1;
};

// Blob center at progress s in [0,1] for the forward (even) member of a pair.
inline std::pair<double, double> blob_center(std::size_t pair, const Waypoints& w, double s) {
  switch (pair) {
    case 0: return {w.y0, w.x0 + (w.x1 - w.x0) * s};
    case 1: return {w.y0 + (w.y1 - w.y0) * s, w.x0};
    case 2:
      return s < 0.5 ? std::pair{w.y0, w.x0 + (w.x1 - w.x0) * 2 * s}
                     : std::pair{w.y0 + (w.y1 - w.y0) * (2 * s - 1), w.x1};
    default:
      return s < 0.5 ? std::pair{w.y0 + (w.y1 - w.y0) * 2 * s, w.x0}
                     : std::pair{w.y1, w.x0 + (w.x1 - w.x0) * (2 * s - 1)};
  }
}

}  // namespace detail

/// Deterministic per seed; exactly `per_class` videos per class, ordered by
/// class then index.
template <typename T>
std::vector<RawVideo<T>> generate_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.classes < 2) throw std::invalid_argument("synthetic dataset needs >= 2 classes");
  if (cfg.classes > SyntheticConfig::kMaxClasses)
    throw std::invalid_argument("synthetic dataset supports at most " + std::to_string(SyntheticConfig::kMaxClasses) +
                                " classes");
  if (cfg.frames < 1 || cfg.channels < 1 || cfg.height < 1 || cfg.width < 1)
    throw std::invalid_argument("synthetic extents must be >= 1");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double hi_y = static_cast<double>(cfg.height) - 1, hi_x = static_cast<double>(cfg.width) - 1;
  const std::size_t plane = cfg.height * cfg.width;

  std::vector<RawVideo<T>> out;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    const std::size_t pair = c / 2;
    const bool reversed = c % 2 == 1;
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      // Travel from the low quarter to the high quarter of each axis, jittered.
      detail::Waypoints w{hi_y * (0.1 + 0.15 * unit(rng)), hi_x * (0.1 + 0.15 * unit(rng)),
                          hi_y * (0.75 + 0.15 * unit(rng)), hi_x * (0.75 + 0.15 * unit(rng))};
      // Straight moves sit on a random row/column.
      if (pair == 0) w.y0 = w.y1 = hi_y * unit(rng);
      if (pair == 1) w.x0 = w.x1 = hi_x * unit(rng);
      const double amplitude = 0.8 + 0.4 * unit(rng);

      Tensor<T> frames(Shape{{Axis::T, cfg.frames}, {Axis::C, cfg.channels}, {Axis::H, cfg.height},
                             {Axis::W, cfg.width}});
      auto d = frames.mutable_data();
      for (std::size_t f = 0; f < cfg.frames; ++f) {
        const double s = cfg.frames == 1 ? 0.0 : static_cast<double>(f) / static_cast<double>(cfg.frames - 1);
        const auto [cy, cx] = detail::blob_center(pair, w, s);
        const std::size_t slot = reversed ? cfg.frames - 1 - f : f;
        for (std::size_t ch = 0; ch < cfg.channels; ++ch)
          for (std::size_t y = 0; y < cfg.height; ++y)
            for (std::size_t x = 0; x < cfg.width; ++x) {
              const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
              const double v = amplitude * std::exp(-(dy * dy + dx * dx) / (2 * cfg.blob_sigma * cfg.blob_sigma)) +
                               cfg.noise * gauss(rng);
              d[(slot * cfg.channels + ch) * plane + y * cfg.width + x] = static_cast<T>(v);
            }
      }
      RawVideo<T> v;
      v.id = std::string(motion_kind_name(c)) + "_" + std::to_string(i);
      v.frames = std::move(frames);
      v.label = c;
      out.push_back(std::move(v));
    }
  }
  return out;
}

/// Time-reversed copy (frame k <- frame N-1-k).
template <typename T>
RawVideo<T> reverse_time(const RawVideo<T>& v) {
  RawVideo<T> r = v;
  const std::size_t n = v.frame_count(), per = v.frames.size() / n;
  auto src = v.frames.data();
  auto dst = r.frames.mutable_data();
  for (std::size_t f = 0; f < n; ++f)
    std::copy(src.begin() + static_cast<std::ptrdiff_t>((n - 1 - f) * per),
              src.begin() + static_cast<std::ptrdiff_t>((n - f) * per),
              dst.begin() + static_cast<std::ptrdiff_t>(f * per));
  return r;
}

// ---------------------------------------------------------------------------
// Augmentation for the toy trainer. Parameter ranges are fixed here.

struct AugmentConfig {
  bool horizontal_flip = false;
  bool corner_crop = false;
  /// Crop side as a fraction of the frame, drawn from this range.
  double crop_min = 0.75;
  double crop_max = 1.0;
};

/// Label after a horizontal flip: only left/right swap. Kinds beyond the
/// straight moves have no mirrored counterpart in the class set.
inline std::size_t mirror_label(std::size_t c) {
  if (c >= 4) throw std::invalid_argument("horizontal flip is undefined for motion kind " + std::to_string(c));
  return c < 2 ? c ^ 1u : c;
}

template <typename T>
Tensor<T> flip_width(const Tensor<T>& x) {
  const std::size_t w = x.shape().extent(Axis::W);
  Tensor<T> out(x.shape());
  auto s = x.data();
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); i += w)
    for (std::size_t j = 0; j < w; ++j) d[i + j] = s[i + w - 1 - j];
  return out;
}

/// Applies the same random flip / corner crop (resized back) to every unit
/// of one clip stack. Returns the possibly remapped label.
template <typename T>
std::size_t augment_units(std::vector<ActionUnit<T>>& units, std::size_t label, const AugmentConfig& cfg,
                          std::mt19937_64& rng) {
  if (cfg.horizontal_flip && std::bernoulli_distribution(0.5)(rng)) {
    for (auto& u : units) u.clip = flip_width(u.clip);
    label = mirror_label(label);
  }
  if (cfg.corner_crop) {
    const auto& s = units.front().clip.shape();
    const std::size_t h = s.extent(Axis::H), w = s.extent(Axis::W);
    const double frac = std::uniform_real_distribution<double>(cfg.crop_min, cfg.crop_max)(rng);
    const std::size_t ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frac * static_cast<double>(h))));
    const std::size_t cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frac * static_cast<double>(w))));
    // Four corners plus center.
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, 4)(rng);
    const std::size_t y0 = pick == 4 ? (h - ch) / 2 : (pick / 2) * (h - ch);
    const std::size_t x0 = pick == 4 ? (w - cw) / 2 : (pick % 2) * (w - cw);
    for (auto& u : units) u.clip = resize_bilinear(crop_hw(u.clip, y0, x0, ch, cw), h, w);
  }
  return label;
}

// ---------------------------------------------------------------------------
// Dataset manifest: one record per line, tab separated
//   <id> \t <path to F4DT frames file> \t <frame count> \t <label>

struct ManifestRecord {
  std::string id;
  std::string path;
  std::size_t frames = 0;
  std::size_t label = 0;
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest '" + path + "'");
  for (const auto& r : records) {
    if (r.id.find_first_of("\t\n") != std::string::npos || r.path.find_first_of("\t\n") != std::string::npos)
      throw std::invalid_argument("manifest fields may not contain tabs or newlines: '" + r.id + "'");
    os << r.id << '\t' << r.path << '\t' << r.frames << '\t' << r.label << '\n';
  }
  if (!os) throw std::runtime_error("write failed for manifest '" + path + "'");
}

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest '" + path + "'");
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 4) throw FormatError(path + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    try {
      out.push_back({f[0], f[1], std::stoul(f[2]), std::stoul(f[3])});
    } catch (const std::logic_error&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad integer field");
    }
  }
  return out;
}

/// Loads a manifest entry's frames and checks the recorded frame count.
template <typename T>
RawVideo<T> load_video(const ManifestRecord& r) {
  RawVideo<T> v;
  v.id = r.id;
  v.label = r.label;
  v.frames = load_tensor<T>(r.path);
  v.validate();
  if (v.frame_count() != r.frames)
    throw FormatError(r.path + ": manifest says " + std::to_string(r.frames) + " frames, file has " +
                      std::to_string(v.frame_count()));
  return v;
}

}  // namespace f4d
