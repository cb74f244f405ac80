#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "entangle/diffcore/params.hpp"

namespace entangle::diffcore {

/// Raised when a loss or gradient stops being finite.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double learning_rate = 0.004;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer with bias-corrected first and second moments.
/// Parameters absent from a gradient map are left untouched for that step.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.learning_rate > 0.0)) throw std::invalid_argument("AdamOptimizer: learning rate must be positive");
  }

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return step_; }

  void step(ParameterSet& params, const GradientMap& grads) {
    if (!grads.congruent_with(params))
      throw std::invalid_argument("AdamOptimizer: gradients not congruent with parameters");
    if (!grads.all_finite()) throw DivergenceError("non-finite gradient encountered");
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (const auto& [name, g] : grads) {
      if (!first_.contains(name)) {
        first_.add(name, g.rows(), g.cols());
        second_.add(name, g.rows(), g.cols());
      }
      Matrix& m = first_.at(name);
      Matrix& v = second_.at(name);
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      params.at(name).array() -=
          cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
    }
  }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  NamedArrays first_;
  NamedArrays second_;
};

}  // namespace entangle::diffcore
