#pragma once

// Checkpoint directory layout:
//   manifest.json           {"version", "dtype", "entries": [{name, file, shape, kind}]}
//   <index>.f4dt            one tensor file per entry, in manifest order
// `kind` is "parameter" or "buffer" (batch-norm running statistics).

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "f4d/nn.hpp"
#include "f4d/tensor_io.hpp"
#include "f4d/version.hpp"

namespace f4d {

inline nlohmann::ordered_json shape_json(const Shape& s) {
  auto a = nlohmann::ordered_json::array();
  for (const auto& d : s.dims())
    a.push_back(nlohmann::ordered_json::array({std::string(1, axis_code(d.axis)), d.extent}));
  return a;
}

inline Shape shape_from_json(const nlohmann::ordered_json& j) {
  std::vector<Dim> dims;
  for (const auto& d : j) {
    const auto code = d.at(0).get<std::string>();
    if (code.size() != 1) throw FormatError("bad axis code '" + code + "'");
    const auto axis = axis_from_code(code[0]);
    if (!axis) throw FormatError("unknown axis code '" + code + "'");
    dims.push_back(Dim{*axis, d.at(1).get<std::size_t>()});
  }
  return Shape(std::move(dims));
}

template <typename T>
void save_checkpoint(const std::string& dir, const ParameterStore<T>& store, DType dtype) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create checkpoint directory '" + dir + "': " + ec.message());
  nlohmann::ordered_json m;
  m["version"] = kVersion;
  m["dtype"] = dtype_name(dtype);
  m["entries"] = nlohmann::ordered_json::array();
  std::size_t idx = 0;
  auto put = [&](const std::string& name, const Tensor<T>& t, const char* kind) {
    const std::string file = std::to_string(idx++) + ".f4dt";
    save_tensor((fs::path(dir) / file).string(), t, dtype);
    m["entries"].push_back({{"name", name}, {"file", file}, {"shape", shape_json(t.shape())}, {"kind", kind}});
  };
  for (auto* p : store.parameters()) put(p->name, p->value, "parameter");
  for (const auto& [n, t] : store.buffers()) put(n, *t, "buffer");
  const auto path = (fs::path(dir) / "manifest.json").string();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  os << m.dump(2) << '\n';
}

inline nlohmann::ordered_json read_checkpoint_manifest(const std::string& dir) {
  const auto path = (std::filesystem::path(dir) / "manifest.json").string();
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read '" + path + "'");
  try {
    return nlohmann::ordered_json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

/// Total element count of entries of the given kind.
inline std::size_t checkpoint_element_count(const std::string& dir, const std::string& kind = "parameter") {
  std::size_t n = 0;
  const auto m = read_checkpoint_manifest(dir);
  for (const auto& e : m.at("entries"))
    if (e.at("kind") == kind) n += shape_from_json(e.at("shape")).numel();
  return n;
}

/// Load into an already-constructed store. Every entry must match a
/// registered name with an identical shape, and every parameter and buffer
/// must be present.
template <typename T>
void load_checkpoint(const std::string& dir, ParameterStore<T>& store) {
  const auto m = read_checkpoint_manifest(dir);
  std::size_t params = 0, buffers = 0;
  const auto bufs = store.buffers();
  for (const auto& e : m.at("entries")) {
    const auto name = e.at("name").get<std::string>();
    const auto kind = e.at("kind").get<std::string>();
    auto t = load_tensor<T>((std::filesystem::path(dir) / e.at("file").get<std::string>()).string());
    Tensor<T>* dst = nullptr;
    if (kind == "parameter") {
      if (auto* p = store.find(name)) dst = &p->value, ++params;
    } else if (kind == "buffer") {
      for (const auto& [n, b] : bufs)
        if (n == name) dst = b, ++buffers;
    } else {
      throw FormatError(dir + ": unknown entry kind '" + kind + "'");
    }
    if (!dst) throw FormatError(dir + ": checkpoint entry '" + name + "' has no counterpart in the model");
    if (!(dst->shape() == t.shape()))
      throw ShapeError(dir + ": '" + name + "' is " + t.shape().str() + ", model expects " + dst->shape().str());
    *dst = std::move(t);
  }
  if (params != store.parameters().size() || buffers != bufs.size())
    throw FormatError(dir + ": checkpoint covers " + std::to_string(params) + "/" +
                      std::to_string(store.parameters().size()) + " parameters and " + std::to_string(buffers) + "/" +
                      std::to_string(bufs.size()) + " buffers");
}

}  // namespace f4d
