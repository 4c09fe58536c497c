#pragma once

// Toy trainer: SGD with momentum over sampled action-unit stacks, softmax
// cross-entropy loss, step decay of the learning rate.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "f4d/backbone.hpp"
#include "f4d/synthetic.hpp"

namespace f4d {

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<std::size_t> decay_epochs{20, 40, 60};
  double decay_factor = 0.1;

  double lr_at(std::size_t epoch) const {
    double lr_e = lr;
    for (auto e : decay_epochs)
      if (epoch > e) lr_e *= decay_factor;
    return lr_e;
  }
};

struct TrainOptions {
  OptimizerConfig optimizer;
  SamplerConfig sampler{4, 8, 4, 2, SampleMode::Train, 0};
  AugmentConfig augment;
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  /// Stop at the first epoch with zero training error.
  bool stop_at_zero_train_error = false;
};

/// Epoch 0 is the untrained model. For later epochs `train_loss` is the mean
/// training-mode minibatch loss over the epoch; for epoch 0 it is the
/// eval-mode loss over the training set. Errors are always eval-mode.
struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_error = 0.0;
  double test_error = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainCurve {
  std::string model;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  friend bool operator==(const TrainCurve&, const TrainCurve&) = default;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Momentum SGD: v <- mu*v + g + wd*w ; w <- w - lr*v.
template <typename T>
class SGD {
 public:
  SGD(ParameterStore<T>& store, const OptimizerConfig& cfg) : cfg_(cfg) {
    for (auto* p : store.parameters())
      if (p->trainable) {
        params_.push_back(p);
        velocity_.emplace_back(p->value.shape());
      }
  }

  void step(double lr) {
    const T mu = static_cast<T>(cfg_.momentum), wd = static_cast<T>(cfg_.weight_decay), a = static_cast<T>(lr);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k]->value.mutable_data();
      auto g = params_[k]->grad.data();
      auto v = velocity_[k].mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] + g[i] + wd * w[i];
        w[i] -= a * v[i];
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> velocity_;
};

/// Stack (U, C, T, H, W) samples into (B, U, C, T, H, W).
template <typename T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& items) {
  const auto& s = items.front()->shape();
  std::vector<Dim> dims{{Axis::B, items.size()}};
  for (const auto& d : s.dims()) dims.push_back(d);
  std::vector<T> data;
  data.reserve(items.size() * s.numel());
  for (const auto* t : items) data.insert(data.end(), t->data().begin(), t->data().end());
  return Tensor<T>(Shape(std::move(dims)), std::move(data));
}

struct EvalResult {
  double loss = 0.0;
  double error = 0.0;
};

/// Eval-mode loss and top-1 error over test-mode samples of `videos`.
template <typename T>
EvalResult evaluate_model(const Backbone<T>& model, const std::vector<RawVideo<T>>& videos, SamplerConfig sampler,
                          std::size_t batch_size) {
  if (videos.empty()) return {};
  sampler.mode = SampleMode::Test;
  std::vector<Tensor<T>> clips;
  for (const auto& v : videos) clips.push_back(stack_units(sample_action_units(v, sampler)));
  double loss = 0.0;
  std::size_t wrong = 0;
  for (std::size_t b0 = 0; b0 < videos.size(); b0 += batch_size) {
    const std::size_t b1 = std::min(videos.size(), b0 + batch_size);
    std::vector<const Tensor<T>*> items;
    std::vector<std::size_t> labels;
    for (std::size_t i = b0; i < b1; ++i) {
      items.push_back(&clips[i]);
      labels.push_back(videos[i].label);
    }
    Graph<T> g(Mode::Eval, 0);
    Var logits = model(g, g.constant(stack_batch(items)));
    Var l = ad::softmax_cross_entropy(g, logits, labels);
    loss += static_cast<double>(g.value(l)[0]) * static_cast<double>(b1 - b0);
    const auto& lv = g.value(logits);
    const std::size_t k = lv.shape().extent(Axis::C);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto row = lv.data().subspan(i * k, k);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      wrong += pred != labels[i];
    }
  }
  const auto n = static_cast<double>(videos.size());
  return {loss / n, static_cast<double>(wrong) / n};
}

/// Train `model` in place. Single-threaded and deterministic for a fixed seed.
template <typename T>
TrainCurve train_toy(Backbone<T>& model, const std::vector<RawVideo<T>>& train_set,
                     const std::vector<RawVideo<T>>& test_set, const TrainOptions& opt,
                     const std::string& name = "model") {
  if (train_set.empty()) throw std::invalid_argument("empty training set");
  if (opt.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  TrainCurve curve{name, opt.seed, {}};
  std::mt19937_64 rng(opt.seed);
  SamplerConfig scfg = opt.sampler;
  scfg.mode = SampleMode::Train;
  scfg.seed = rng();
  SegmentSampler sampler(scfg);
  SGD<T> sgd(model.store(), opt.optimizer);

  auto record_eval = [&](std::size_t epoch, std::optional<double> train_loss) {
    const auto tr = evaluate_model(model, train_set, opt.sampler, opt.batch_size);
    const auto te = evaluate_model(model, test_set, opt.sampler, opt.batch_size);
    curve.epochs.push_back({epoch, train_loss.value_or(tr.loss), tr.error, te.error});
  };
  record_eval(0, std::nullopt);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    if (opt.stop_at_zero_train_error && curve.epochs.back().train_error == 0.0) break;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = opt.optimizer.lr_at(epoch);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += opt.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + opt.batch_size);
      std::vector<Tensor<T>> clips;
      std::vector<std::size_t> labels;
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& v = train_set[order[i]];
        auto units = sampler.sample(v);
        labels.push_back(augment_units(units, v.label, opt.augment, rng));
        clips.push_back(stack_units(units));
      }
      std::vector<const Tensor<T>*> items;
      for (const auto& c : clips) items.push_back(&c);

      model.store().zero_grad();
      Graph<T> g(Mode::Train, rng());
      Var l = ad::softmax_cross_entropy(g, model(g, g.constant(stack_batch(items))), labels);
      const double lv = static_cast<double>(g.value(l)[0]);
      if (!std::isfinite(lv))
        throw TrainingDiverged(name + ": non-finite loss " + std::to_string(lv) + " at epoch " +
                               std::to_string(epoch) + ", batch starting " + std::to_string(b0) + ", lr " +
                               std::to_string(lr));
      g.backward(l);
      sgd.step(lr);
      loss_sum += lv * static_cast<double>(b1 - b0);
    }
    record_eval(epoch, loss_sum / static_cast<double>(order.size()));
  }
  return curve;
}

/// Plan and data sizes used by the learnability smoke test and the
/// factorized-vs-full comparison.
struct ToySetup {
  BackbonePlan plan;
  SyntheticConfig data;
  TrainOptions train;

  static ToySetup smoke() {
    ToySetup s;
    s.plan.units = 4;
    s.plan.in_channels = 1;
    s.plan.classes = 2;
    s.plan.stem_width = 8;
    s.plan.stages = {{"conv2", 1, 8, 1}, {"conv3", 1, 16, 2}, {"conv4", 1, 16, 2}, {"conv5", 1, 32, 2}};
    s.plan.insertion = {"conv1", "conv2", "conv3", "conv4", "conv5"};
    s.plan.block.reduction = 4;
    s.data.classes = 2;
    s.data.per_class = 16;
    s.data.frames = 40;
    s.data.height = s.data.width = 8;
    s.train.sampler = {4, 8, 4, 2, SampleMode::Train, 0};
    s.train.epochs = 200;
    s.train.batch_size = 8;
    s.train.stop_at_zero_train_error = true;
    return s;
  }

  /// Same model and data as smoke(), trained for a fixed short budget so
  /// final losses are still informative.
  static ToySetup compare() {
    auto s = smoke();
    s.train.epochs = 6;
    s.train.stop_at_zero_train_error = false;
    return s;
  }
};

/// Median of final-epoch train losses.
inline double median_final_loss(const std::vector<TrainCurve>& curves) {
  std::vector<double> v;
  for (const auto& c : curves)
    if (!c.epochs.empty()) v.push_back(c.epochs.back().train_loss);
  if (v.empty()) throw std::invalid_argument("no curves");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace f4d
