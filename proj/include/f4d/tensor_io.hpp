#pragma once

// Raw tensor fixture format (all integers little-endian):
//
//   bytes 0..3   magic "F4DT"
//   byte  4      version (1)
//   byte  5      flags; bit 0 set = 8-byte reals, clear = 4-byte reals
//   byte  6      axis count n
//   n records    1-byte axis code ('B','C','U','T','H','W','O'), 8-byte extent
//   payload      numel reals, row-major

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>

#include "f4d/tensor.hpp"

namespace f4d {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 4> kTensorMagic{'F', '4', 'D', 'T'};
inline constexpr std::uint8_t kTensorFormatVersion = 1;
inline constexpr std::uint8_t kFlagF64 = 0x01;

enum class DType { F32, F64 };

inline std::string dtype_name(DType d) { return d == DType::F64 ? "f64" : "f32"; }

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<char, sizeof(U)> buf;
  std::memcpy(buf.data(), &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<char, sizeof(U)> buf;
  if (!is.read(buf.data(), buf.size())) throw FormatError("truncated tensor stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  U v;
  std::memcpy(&v, buf.data(), sizeof(U));
  return v;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& x, DType dtype) {
  os.write(kTensorMagic.data(), kTensorMagic.size());
  detail::put_le<std::uint8_t>(os, kTensorFormatVersion);
  detail::put_le<std::uint8_t>(os, dtype == DType::F64 ? kFlagF64 : 0);
  if (x.shape().rank() > 255) throw FormatError("too many axes");
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(x.shape().rank()));
  for (const auto& d : x.shape().dims()) {
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(axis_code(d.axis)));
    detail::put_le<std::uint64_t>(os, d.extent);
  }
  for (auto v : x.data()) {
    if (dtype == DType::F64)
      detail::put_le<double>(os, static_cast<double>(v));
    else
      detail::put_le<float>(os, static_cast<float>(v));
  }
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& x) {
  write_tensor(os, x, std::is_same_v<T, double> ? DType::F64 : DType::F32);
}

/// Reads any stored dtype and converts to T.
template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kTensorMagic)
    throw FormatError("bad magic: not an F4DT tensor");
  auto version = detail::get_le<std::uint8_t>(is);
  if (version != kTensorFormatVersion)
    throw FormatError("unsupported tensor format version " + std::to_string(version));
  auto flags = detail::get_le<std::uint8_t>(is);
  auto rank = detail::get_le<std::uint8_t>(is);
  std::vector<Dim> dims;
  for (std::uint8_t i = 0; i < rank; ++i) {
    auto code = static_cast<char>(detail::get_le<std::uint8_t>(is));
    auto axis = axis_from_code(code);
    if (!axis) throw FormatError(std::string("unknown axis code '") + code + "'");
    auto extent = detail::get_le<std::uint64_t>(is);
    dims.push_back({*axis, static_cast<std::size_t>(extent)});
  }
  Shape shape(std::move(dims));
  std::vector<T> data(shape.numel());
  for (auto& v : data) {
    if (flags & kFlagF64)
      v = static_cast<T>(detail::get_le<double>(is));
    else
      v = static_cast<T>(detail::get_le<float>(is));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& x, DType dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_tensor(os, x, dtype);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
  try {
    return read_tensor<T>(is);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace f4d
