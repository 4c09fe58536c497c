#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace f4d {

/// Axis names. B,C,U,T,H,W are the video axes; O is the output-channel axis
/// of weight tensors.
enum class Axis : char {
  B = 'B',
  C = 'C',
  U = 'U',
  T = 'T',
  H = 'H',
  W = 'W',
  O = 'O',
};

inline char axis_code(Axis a) { return static_cast<char>(a); }

inline std::optional<Axis> axis_from_code(char c) {
  switch (c) {
    case 'B': return Axis::B;
    case 'C': return Axis::C;
    case 'U': return Axis::U;
    case 'T': return Axis::T;
    case 'H': return Axis::H;
    case 'W': return Axis::W;
    case 'O': return Axis::O;
    default: return std::nullopt;
  }
}

inline std::string axis_name(Axis a) { return std::string(1, axis_code(a)); }

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Dim {
  Axis axis;
  std::size_t extent;
  friend bool operator==(const Dim&, const Dim&) = default;
};

/// Ordered list of named axes. Row-major: the last axis is contiguous.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Dim> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<Dim> dims) : dims_(std::move(dims)) { validate(); }

  std::size_t rank() const { return dims_.size(); }
  const std::vector<Dim>& dims() const { return dims_; }
  const Dim& operator[](std::size_t i) const { return dims_[i]; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (const auto& d : dims_) n *= d.extent;
    return n;
  }

  std::optional<std::size_t> find(Axis a) const {
    for (std::size_t i = 0; i < dims_.size(); ++i)
      if (dims_[i].axis == a) return i;
    return std::nullopt;
  }

  bool has(Axis a) const { return find(a).has_value(); }

  std::size_t index_of(Axis a) const {
    auto i = find(a);
    if (!i) throw ShapeError("axis '" + axis_name(a) + "' not present in shape " + str());
    return *i;
  }

  std::size_t extent(Axis a) const { return dims_[index_of(a)].extent; }

  /// Extent of `a`, or 1 when the axis is absent.
  std::size_t extent_or_one(Axis a) const {
    auto i = find(a);
    return i ? dims_[*i].extent : 1;
  }

  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(dims_.size(), 1);
    for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i].extent;
    return s;
  }

  Shape with_extent(Axis a, std::size_t extent) const {
    auto d = dims_;
    d[index_of(a)].extent = extent;
    return Shape(std::move(d));
  }

  std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += axis_code(dims_[i].axis);
      s += ":" + std::to_string(dims_[i].extent);
    }
    return s + ")";
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  void validate() const {
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (dims_[i].extent < 1)
        throw ShapeError("axis '" + axis_name(dims_[i].axis) + "' has extent 0");
      for (std::size_t j = 0; j < i; ++j)
        if (dims_[i].axis == dims_[j].axis)
          throw ShapeError("duplicate axis '" + axis_name(dims_[i].axis) + "'");
    }
  }

  std::vector<Dim> dims_;
};

/// Dense tensor with named axes and contiguous row-major storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T(0)) {}
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
  }

  /// Shape without storage, for counting-only models. Element access is
  /// invalid on a hollow tensor.
  static Tensor hollow(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.clear();
    return t;
  }
  bool is_hollow() const { return data_.size() != shape_.numel(); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<const T> data() const { return data_; }
  std::span<T> mutable_data() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  /// Element lookup by per-axis index, in this tensor's axis order.
  T at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }
  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }

  /// Reinterpret the same data under another shape with equal element count.
  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.rank()) throw ShapeError("index rank mismatch for " + shape_.str());
    std::size_t off = 0;
    std::size_t i = 0;
    for (auto v : idx) {
      if (v >= shape_[i].extent) throw std::out_of_range("index out of range");
      off = off * shape_[i].extent + v;
      ++i;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

namespace detail {

/// Strides of `src` laid against the axis order of `target`; 0 where `src`
/// lacks the axis or has extent 1 (broadcast).
inline std::vector<std::size_t> aligned_strides(const Shape& target, const Shape& src) {
  auto ss = src.strides();
  std::vector<std::size_t> out(target.rank(), 0);
  for (std::size_t i = 0; i < target.rank(); ++i) {
    auto j = src.find(target[i].axis);
    if (j && src[*j].extent != 1) out[i] = ss[*j];
  }
  return out;
}

/// Visit every index of `shape` in row-major order, tracking one offset per
/// stride set. `fn(linear, offsets...)`.
template <typename Fn>
void for_each_offset(const Shape& shape, const std::vector<std::size_t>& sa, Fn&& fn) {
  const std::size_t rank = shape.rank();
  const std::size_t n = shape.numel();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  for (std::size_t lin = 0; lin < n; ++lin) {
    fn(lin, oa);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < shape[d].extent) {
        oa += sa[d];
        break;
      }
      oa -= sa[d] * (shape[d].extent - 1);
      idx[d] = 0;
    }
  }
}

/// Gather `x` into a new axis order. `order` lists x's axes in output order.
template <typename T>
Tensor<T> reorder(const Tensor<T>& x, const std::vector<Axis>& order) {
  std::vector<Dim> dims;
  dims.reserve(order.size());
  for (Axis a : order) dims.push_back({a, x.shape().extent(a)});
  Shape out_shape(std::move(dims));
  if (out_shape.rank() != x.shape().rank()) throw ShapeError("reorder must keep every axis");
  auto src = aligned_strides(out_shape, x.shape());
  // aligned_strides zeroes extent-1 axes; harmless since their index is always 0.
  Tensor<T> out(out_shape);
  auto in = x.data();
  auto o = out.mutable_data();
  for_each_offset(out_shape, src, [&](std::size_t lin, std::size_t off) { o[lin] = in[off]; });
  return out;
}

}  // namespace detail

/// Axis swap of two named axes.
struct AxisPermutation {
  Axis first;
  Axis second;
};

/// Swap the positions of two axes; data is physically reordered.
template <typename T>
Tensor<T> permute(const Tensor<T>& x, AxisPermutation p) {
  auto i = x.shape().index_of(p.first);
  auto j = x.shape().index_of(p.second);
  std::vector<Axis> order;
  for (const auto& d : x.shape().dims()) order.push_back(d.axis);
  std::swap(order[i], order[j]);
  return detail::reorder(x, order);
}

/// (B, U, ...) -> (B*U, ...). U is moved next to B first if needed.
template <typename T>
Tensor<T> merge_unit_into_batch(const Tensor<T>& x) {
  const auto& s = x.shape();
  auto bi = s.index_of(Axis::B);
  auto ui = s.index_of(Axis::U);
  Tensor<T> src = x;
  if (ui != bi + 1) {
    std::vector<Axis> order;
    for (const auto& d : s.dims()) {
      if (d.axis == Axis::U) continue;
      order.push_back(d.axis);
      if (d.axis == Axis::B) order.push_back(Axis::U);
    }
    src = detail::reorder(x, order);
  }
  std::vector<Dim> dims;
  for (const auto& d : src.shape().dims()) {
    if (d.axis == Axis::U) continue;
    if (d.axis == Axis::B)
      dims.push_back({Axis::B, d.extent * s.extent(Axis::U)});
    else
      dims.push_back(d);
  }
  return src.reshaped(Shape(std::move(dims)));
}

/// (B*U, ...) -> (B, U, ...).
template <typename T>
Tensor<T> split_unit_from_batch(const Tensor<T>& x, std::size_t units) {
  const auto& s = x.shape();
  if (s.has(Axis::U)) throw ShapeError("tensor already has a U axis");
  auto b = s.extent(Axis::B);
  if (units == 0 || b % units != 0)
    throw ShapeError("batch extent " + std::to_string(b) + " is not divisible by U=" +
                     std::to_string(units));
  std::vector<Dim> dims;
  for (const auto& d : s.dims()) {
    if (d.axis == Axis::B) {
      dims.push_back({Axis::B, b / units});
      dims.push_back({Axis::U, units});
    } else {
      dims.push_back(d);
    }
  }
  return x.reshaped(Shape(std::move(dims)));
}

namespace detail {

inline void check_broadcastable(const Shape& a, const Shape& b) {
  for (const auto& d : b.dims()) {
    auto i = a.find(d.axis);
    if (!i) {
      if (d.extent != 1)
        throw ShapeError("axis '" + axis_name(d.axis) + "' of " + b.str() + " missing from " +
                         a.str());
      continue;
    }
    if (d.extent != 1 && d.extent != a[*i].extent)
      throw ShapeError("incompatible extents on axis '" + axis_name(d.axis) + "': " + a.str() +
                       " vs " + b.str());
  }
}

}  // namespace detail

/// Element-wise product; `b` broadcasts against `a`, result has a's shape.
template <typename T>
Tensor<T> broadcast_mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcastable(a.shape(), b.shape());
  auto sb = detail::aligned_strides(a.shape(), b.shape());
  Tensor<T> out(a.shape());
  auto pa = a.data();
  auto pb = b.data();
  auto po = out.mutable_data();
  detail::for_each_offset(a.shape(), sb,
                          [&](std::size_t lin, std::size_t ob) { po[lin] = pa[lin] * pb[ob]; });
  return out;
}

template <typename T>
Tensor<T> broadcast_add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcastable(a.shape(), b.shape());
  auto sb = detail::aligned_strides(a.shape(), b.shape());
  Tensor<T> out(a.shape());
  auto pa = a.data();
  auto pb = b.data();
  auto po = out.mutable_data();
  detail::for_each_offset(a.shape(), sb,
                          [&](std::size_t lin, std::size_t ob) { po[lin] = pa[lin] + pb[ob]; });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  return out;
}

template <typename T, typename Fn>
Tensor<T> map(const Tensor<T>& x, Fn&& fn) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fn(x[i]);
  return out;
}

enum class ReduceKind { Mean, Max };

template <typename T>
struct Reduction {
  Tensor<T> value;
  /// For Max: linear input index of the selected element, per output element.
  std::vector<std::size_t> argmax;
};

/// Reduce over `axes`, keeping them with extent 1. Max ties resolve to the
/// lowest linear index. An empty axis set returns x unchanged.
template <typename T>
Reduction<T> reduce(const Tensor<T>& x, const std::vector<Axis>& axes, ReduceKind kind) {
  const auto& s = x.shape();
  auto out_shape = s;
  std::size_t count = 1;
  for (Axis a : axes) {
    count *= s.extent(a);
    out_shape = out_shape.with_extent(a, 1);
  }
  Reduction<T> r{Tensor<T>(out_shape), {}};
  if (axes.empty()) {
    r.value = x;
    if (kind == ReduceKind::Max) {
      r.argmax.resize(x.size());
      std::iota(r.argmax.begin(), r.argmax.end(), std::size_t{0});
    }
    return r;
  }
  auto so = detail::aligned_strides(s, out_shape);
  auto in = x.data();
  auto o = r.value.mutable_data();
  if (kind == ReduceKind::Mean) {
    detail::for_each_offset(s, so, [&](std::size_t lin, std::size_t oo) { o[oo] += in[lin]; });
    for (auto& v : o) v /= static_cast<T>(count);
  } else {
    std::vector<bool> seen(o.size(), false);
    r.argmax.assign(o.size(), 0);
    detail::for_each_offset(s, so, [&](std::size_t lin, std::size_t oo) {
      if (!seen[oo] || in[lin] > o[oo]) {
        o[oo] = in[lin];
        r.argmax[oo] = lin;
        seen[oo] = true;
      }
    });
  }
  return r;
}

/// Concatenate along `axis`; `a` occupies the leading slab.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, Axis axis) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto ia = sa.index_of(axis);
  if (sa.rank() != sb.rank() || sb.index_of(axis) != ia)
    throw ShapeError("concat layout mismatch: " + sa.str() + " vs " + sb.str());
  for (std::size_t i = 0; i < sa.rank(); ++i) {
    if (sa[i].axis != sb[i].axis || (i != ia && sa[i].extent != sb[i].extent))
      throw ShapeError("concat extent mismatch: " + sa.str() + " vs " + sb.str());
  }
  auto out_shape = sa.with_extent(axis, sa[ia].extent + sb[ia].extent);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ia; ++i) outer *= sa[i].extent;
  std::size_t inner_a = a.size() / outer;
  std::size_t inner_b = b.size() / outer;
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  for (std::size_t o = 0; o < outer; ++o) {
    auto pa = a.data().subspan(o * inner_a, inner_a);
    auto pb = b.data().subspan(o * inner_b, inner_b);
    data.insert(data.end(), pa.begin(), pa.end());
    data.insert(data.end(), pb.begin(), pb.end());
  }
  return Tensor<T>(out_shape, std::move(data));
}

/// Take [begin, begin+len) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, Axis axis, std::size_t begin, std::size_t len) {
  const auto& s = x.shape();
  auto ia = s.index_of(axis);
  if (len == 0 || begin + len > s[ia].extent) throw ShapeError("slice out of range on " + s.str());
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ia; ++i) outer *= s[i].extent;
  std::size_t inner = x.size() / outer / s[ia].extent;
  std::vector<T> data;
  data.reserve(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    auto row = x.data().subspan((o * s[ia].extent + begin) * inner, len * inner);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor<T>(s.with_extent(axis, len), std::move(data));
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("compare shape mismatch");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// max|a-b| / max(max|b|, tiny)
template <typename T>
T max_rel_error(const Tensor<T>& a, const Tensor<T>& ref) {
  T scale = 0;
  for (auto v : ref.data()) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, ref) / std::max(scale, T(1e-30));
}

}  // namespace f4d
