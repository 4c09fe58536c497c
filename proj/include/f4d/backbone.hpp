#pragma once

#include <algorithm>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "f4d/f4d_block.hpp"

namespace f4d {

struct StageSpec {
  std::string name;           // conv2 .. conv5
  std::size_t units = 1;      // residual units
  std::size_t width = 16;
  std::size_t downsample = 1; // spatial average-pool factor at stage entry
};

/// Miniature residual video network. The stem is "conv1"; F4D blocks are
/// appended to the end of every stage named in `insertion`.
struct BackbonePlan {
  std::size_t in_channels = 1;
  std::size_t classes = 2;
  std::size_t units = 4;
  std::size_t stem_width = 16;
  std::array<std::size_t, 3> stem_kernel{3, 3, 3};  // (T, H, W)
  std::array<std::size_t, 3> unit_kernel{3, 3, 3};
  std::vector<StageSpec> stages{{"conv2", 1, 16, 1}, {"conv3", 1, 32, 2}, {"conv4", 1, 64, 2}, {"conv5", 1, 128, 2}};
  std::set<std::string> insertion;
  /// Template for inserted blocks; `channels` and `units` are filled per stage.
  BlockConfig block;

  std::size_t final_width() const { return stages.empty() ? stem_width : stages.back().width; }

  std::vector<std::string> stage_names() const {
    std::vector<std::string> n{"conv1"};
    for (const auto& s : stages) n.push_back(s.name);
    return n;
  }

  void validate() const {
    if (classes < 2) throw std::invalid_argument("plan needs at least 2 classes");
    if (units < 1 || in_channels < 1 || stem_width < 1) throw std::invalid_argument("plan extents must be >= 1");
    auto names = stage_names();
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (names[i] == names[j]) throw std::invalid_argument("duplicate stage name '" + names[i] + "'");
    for (const auto& s : insertion)
      if (std::find(names.begin(), names.end(), s) == names.end())
        throw std::invalid_argument("F4D insertion at unknown stage '" + s + "'");
    for (const auto& s : stages)
      if (s.units < 1 || s.width < 1 || s.downsample < 1)
        throw std::invalid_argument("stage '" + s.name + "' has a zero extent");
  }

  /// Desk-scale default: widths 16/32/64/128, one unit per stage.
  static BackbonePlan mini() { return {}; }

  /// ResNet50-like stage layout (3,4,6,3 units; widths 256..2048) for
  /// counting only.
  static BackbonePlan resnet50_shaped() {
    BackbonePlan p;
    p.in_channels = 3;
    p.classes = 174;
    p.stem_width = 64;
    p.stem_kernel = {1, 7, 7};
    p.stages = {{"conv2", 3, 256, 2}, {"conv3", 4, 512, 2}, {"conv4", 6, 1024, 2}, {"conv5", 3, 2048, 2}};
    p.insertion = {"conv2", "conv3", "conv4", "conv5"};
    return p;
  }
};

/// conv-BN-ReLU-conv-BN plus shortcut, then ReLU. A 1x1x1 conv + BN projects
/// the shortcut when the width changes.
template <typename T>
class ResidualUnit {
 public:
  ResidualUnit(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
               const std::array<std::size_t, 3>& k, Initializer& init)
      : name_(name) {
    conv1_ = ConvLayer<T>(store, name + ".conv1", kernel_shape(out, in, 1, k[0], k[1], k[2]), false, init);
    bn1_ = BatchNormLayer<T>(store, name + ".bn1", out);
    conv2_ = ConvLayer<T>(store, name + ".conv2", kernel_shape(out, out, 1, k[0], k[1], k[2]), false, init);
    bn2_ = BatchNormLayer<T>(store, name + ".bn2", out);
    if (in != out) {
      proj_ = ConvLayer<T>(store, name + ".proj", kernel_shape(out, in, 1, 1, 1, 1), false, init);
      proj_bn_ = BatchNormLayer<T>(store, name + ".proj_bn", out);
      has_proj_ = true;
    }
  }

  Var operator()(Graph<T>& g, Var x) const {
    Var y = ad::relu(g, bn1_(g, conv1_(g, x)));
    y = bn2_(g, conv2_(g, y));
    Var sc = has_proj_ ? proj_bn_(g, proj_(g, x)) : x;
    return ad::relu(g, ad::add(g, y, sc));
  }

  Shape cost(CostRecorder& rec, const Shape& in) const {
    auto y = conv1_.cost(rec, in);
    bn1_.cost(rec, y);
    rec.relu(name_ + ".relu1", y);
    y = conv2_.cost(rec, y);
    bn2_.cost(rec, y);
    if (has_proj_) {
      proj_.cost(rec, in);
      proj_bn_.cost(rec, y);
    }
    rec.elementwise(name_ + ".residual", "add", y.numel());
    rec.relu(name_ + ".relu2", y);
    return y;
  }

 private:
  std::string name_;
  ConvLayer<T> conv1_, conv2_, proj_;
  BatchNormLayer<T> bn1_, bn2_, proj_bn_;
  bool has_proj_ = false;
};

template <typename T>
class Backbone {
 public:
  /// `counting_only` builds storage-free weights: complexity() works, the
  /// forward pass throws.
  Backbone(const BackbonePlan& plan, std::uint64_t seed, bool counting_only = false) : plan_(plan) {
    plan.validate();
    Initializer init(seed, counting_only);
    const auto& sk = plan.stem_kernel;
    stem_ = ConvLayer<T>(store_, "conv1.conv", kernel_shape(plan.stem_width, plan.in_channels, 1, sk[0], sk[1], sk[2]),
                         false, init);
    stem_bn_ = BatchNormLayer<T>(store_, "conv1.bn", plan.stem_width);
    if (plan.insertion.count("conv1")) stem_block_ = make_block("conv1", plan.stem_width, init);
    std::size_t width = plan.stem_width;
    for (const auto& s : plan.stages) {
      Stage st;
      st.spec = s;
      for (std::size_t u = 0; u < s.units; ++u) {
        st.units.push_back(std::make_unique<ResidualUnit<T>>(store_, s.name + ".unit" + std::to_string(u),
                                                              width, s.width, plan.unit_kernel, init));
        width = s.width;
      }
      if (plan.insertion.count(s.name)) st.block = make_block(s.name, s.width, init);
      stages_.push_back(std::move(st));
    }
    head_ = LinearLayer<T>(store_, "head.fc", width, plan.classes, true, init);
  }

  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  const BackbonePlan& plan() const { return plan_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  std::size_t block_count() const {
    std::size_t n = stem_block_ ? 1 : 0;
    for (const auto& s : stages_) n += s.block ? 1 : 0;
    return n;
  }

  /// video: (B, U, C, T, H, W) -> logits (B, C:classes)
  Var operator()(Graph<T>& g, Var video) const {
    const auto& s = g.value(video).shape();
    if (s.rank() != 6 || s[0].axis != Axis::B || s[1].axis != Axis::U || s[2].axis != Axis::C)
      throw ShapeError("backbone input must be (B,U,C,T,H,W), got " + s.str());
    if (s.extent(Axis::U) != plan_.units)
      throw ShapeError("backbone built for U=" + std::to_string(plan_.units) + ", got " + s.str());
    const std::size_t batch = s.extent(Axis::B);
    Var x = ad::merge_unit(g, video);
    x = ad::relu(g, stem_bn_(g, stem_(g, x)));
    if (stem_block_) x = (*stem_block_)(g, x);
    for (const auto& st : stages_) {
      if (st.spec.downsample > 1) x = ad::avg_pool(g, x, st.spec.downsample);
      for (const auto& u : st.units) x = (*u)(g, x);
      if (st.block) x = (*st.block)(g, x);
    }
    x = ad::reduce_mean(g, x, {Axis::T, Axis::H, Axis::W});
    x = ad::split_unit(g, x, plan_.units);
    x = ad::reduce_mean(g, x, {Axis::U});
    x = ad::reshape(g, x, Shape{{Axis::B, batch}, {Axis::C, head_.in_features()}});
    return head_(g, x);
  }

  /// Analytic per-layer counts for a (B, U, C, T, H, W) input.
  ComplexityReport complexity(const Shape& video, CostModel model = {}) const {
    if (video.rank() != 6 || video[1].axis != Axis::U || video.extent(Axis::U) != plan_.units ||
        video.extent(Axis::C) != plan_.in_channels)
      throw ShapeError("complexity input must be (B,U:" + std::to_string(plan_.units) + ",C:" +
                       std::to_string(plan_.in_channels) + ",T,H,W), got " + video.str());
    ComplexityReport r;
    r.input_shape = video.str();
    CostRecorder rec(r, model);
    Shape x{{Axis::B, video.extent(Axis::B) * plan_.units}, {Axis::C, video.extent(Axis::C)},
            {Axis::T, video.extent(Axis::T)}, {Axis::H, video.extent(Axis::H)}, {Axis::W, video.extent(Axis::W)}};
    x = stem_.cost(rec, x);
    stem_bn_.cost(rec, x);
    rec.relu("conv1.relu", x);
    if (stem_block_) stem_block_->cost(rec, x);
    for (const auto& st : stages_) {
      if (st.spec.downsample > 1) {
        const auto f = st.spec.downsample;
        if (x.extent(Axis::H) % f || x.extent(Axis::W) % f)
          throw ShapeError(st.spec.name + ": downsample factor does not divide " + x.str());
        rec.elementwise(st.spec.name + ".pool", "pool", x.numel());
        x = x.with_extent(Axis::H, x.extent(Axis::H) / f).with_extent(Axis::W, x.extent(Axis::W) / f);
      }
      for (const auto& u : st.units) x = u->cost(rec, x);
      if (st.block) st.block->cost(rec, x);
    }
    rec.elementwise("head.pool", "pool", x.numel());
    head_.cost(rec, Shape{{Axis::B, video.extent(Axis::B)}, {Axis::C, head_.in_features()}});
    return r;
  }

 private:
  struct Stage {
    StageSpec spec;
    std::vector<std::unique_ptr<ResidualUnit<T>>> units;
    std::unique_ptr<F4DBlock<T>> block;
  };

  std::unique_ptr<F4DBlock<T>> make_block(const std::string& stage, std::size_t width, Initializer& init) {
    auto cfg = plan_.block;
    cfg.channels = width;
    cfg.units = plan_.units;
    return std::make_unique<F4DBlock<T>>(store_, stage + ".f4d", cfg, init);
  }

  BackbonePlan plan_;
  ParameterStore<T> store_;
  ConvLayer<T> stem_;
  BatchNormLayer<T> stem_bn_;
  std::unique_ptr<F4DBlock<T>> stem_block_;
  std::vector<Stage> stages_;
  LinearLayer<T> head_;
};

}  // namespace f4d
