#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "f4d/conv.hpp"

namespace f4d {

/// One counted layer. FLOPs are 2 x MACs for conv and dense layers;
/// element-wise work is charged per element by CostModel.
struct LayerCost {
  std::string name;
  std::string kind;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  std::uint64_t nonlinearities = 0;

  friend bool operator==(const LayerCost&, const LayerCost&) = default;
};

struct ComplexityReport {
  std::string model;
  std::string input_shape;
  std::vector<LayerCost> rows;

  LayerCost totals() const {
    LayerCost t{"total", "total"};
    for (const auto& r : rows) {
      t.params += r.params;
      t.macs += r.macs;
      t.flops += r.flops;
      t.nonlinearities += r.nonlinearities;
    }
    return t;
  }

  friend bool operator==(const ComplexityReport&, const ComplexityReport&) = default;
};

/// Per-element FLOP charges for non-MAC work.
struct CostModel {
  std::uint64_t elementwise = 1;   // add, multiply, ReLU, pooling per input element
  std::uint64_t batch_norm = 2;    // normalize + affine
  std::uint64_t sigmoid = 2;       // exp counted as one
};

/// Appends rows to a report with a name prefix.
class CostRecorder {
 public:
  CostRecorder(ComplexityReport& report, CostModel model = {}) : report_(report), model_(model) {}

  const CostModel& model() const { return model_; }

  void conv(const std::string& name, const ConvGeometry& g, bool has_bias) {
    LayerCost c{name, "conv"};
    c.params = std::uint64_t{g.out_ch} * g.in_ch * g.kernel_volume() + (has_bias ? g.out_ch : 0);
    c.macs = g.macs();
    c.flops = 2 * c.macs;
    report_.rows.push_back(c);
  }

  /// `shared`: the weights were already counted by an earlier row.
  void dense(const std::string& name, std::uint64_t rows_applied, std::uint64_t in, std::uint64_t out,
             bool has_bias, bool shared = false) {
    LayerCost c{name, "dense"};
    c.params = shared ? 0 : in * out + (has_bias ? out : 0);
    c.macs = rows_applied * in * out;
    c.flops = 2 * c.macs;
    report_.rows.push_back(c);
  }

  void batch_norm(const std::string& name, const Shape& s) {
    LayerCost c{name, "batch_norm"};
    c.params = 2 * s.extent(Axis::C);
    c.flops = model_.batch_norm * s.numel();
    report_.rows.push_back(c);
  }

  void relu(const std::string& name, const Shape& s) { activation(name, "relu", model_.elementwise * s.numel()); }
  void sigmoid(const std::string& name, const Shape& s) { activation(name, "sigmoid", model_.sigmoid * s.numel()); }

  /// Pooling, residual adds, broadcast multiplies: charged per touched element.
  void elementwise(const std::string& name, const std::string& kind, std::uint64_t elements) {
    LayerCost c{name, kind};
    c.flops = model_.elementwise * elements;
    report_.rows.push_back(c);
  }

 private:
  void activation(const std::string& name, const std::string& kind, std::uint64_t flops) {
    LayerCost c{name, kind};
    c.flops = flops;
    c.nonlinearities = 1;
    report_.rows.push_back(c);
  }

  ComplexityReport& report_;
  CostModel model_;
};

}  // namespace f4d
