#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "f4d/autodiff.hpp"

namespace f4d {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates whose ±(tie_margin * step) probes change any ReLU mask or
  /// max selection are skipped: the subgradient is not unique there.
  double tie_margin = 10.0;
  /// Uniform offset in [-jitter, jitter] added to every coordinate before
  /// probing, to move off exact ties. Original values are restored after.
  double jitter = 1e-3;
  std::uint64_t seed = 0;
  /// Graph mode for every evaluation. Train mode replays the same dropout
  /// masks on every probe because the graph seed is fixed.
  Mode mode = Mode::Eval;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;  // "param[index]" of the max error
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Compare reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate, for every listed parameter.
/// `f(Graph<double>&) -> Var` must build its graph from the parameters
/// (bound with Graph::param) and return a scalar. The error per coordinate is
/// |g_fd - g_an| / max(1e-8, |g_fd| + |g_an|).
template <typename F>
GradCheckResult grad_check(F&& f, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& opt = {}) {
  std::vector<Tensor<double>> original;
  for (auto* p : params) original.push_back(p->value);

  std::mt19937_64 rng(opt.seed);
  if (opt.jitter > 0) {
    std::uniform_real_distribution<double> off(-opt.jitter, opt.jitter);
    for (auto* p : params)
      for (auto& v : p->value.mutable_data()) v += off(rng);
  }

  auto evaluate = [&](std::uint64_t* signature) {
    Graph<double> g(opt.mode, opt.seed);
    Var loss = f(g);
    const double v = g.value(loss)[0];
    if (!std::isfinite(v)) throw NonFiniteError("non-finite value while probing gradients");
    if (signature) *signature = g.branch_signature();
    return v;
  };

  for (auto* p : params) p->zero_grad();
  std::uint64_t base_sig = 0;
  {
    Graph<double> g(opt.mode, opt.seed);
    Var loss = f(g);
    if (!std::isfinite(g.value(loss)[0])) throw NonFiniteError("non-finite loss");
    base_sig = g.branch_signature();
    g.backward(loss);
  }
  std::vector<Tensor<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckResult res;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    auto data = p->value.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double x0 = data[i];
      bool tie = false;
      for (double dir : {-1.0, 1.0}) {
        data[i] = x0 + dir * opt.tie_margin * opt.step;
        std::uint64_t sig = 0;
        evaluate(&sig);
        tie = tie || sig != base_sig;
      }
      if (tie) {
        data[i] = x0;
        ++res.skipped;
        continue;
      }
      data[i] = x0 + opt.step;
      const double fp = evaluate(nullptr);
      data[i] = x0 - opt.step;
      const double fm = evaluate(nullptr);
      data[i] = x0;
      const double fd = (fp - fm) / (2.0 * opt.step);
      const double an = analytic[k][i];
      const double err = std::abs(fd - an) / std::max(1e-8, std::abs(fd) + std::abs(an));
      ++res.checked;
      if (err > res.max_rel_error || res.worst.empty()) {
        res.max_rel_error = std::max(res.max_rel_error, err);
        if (err >= res.max_rel_error) res.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->value = original[k];
    params[k]->grad = analytic[k];
  }
  return res;
}

}  // namespace f4d
