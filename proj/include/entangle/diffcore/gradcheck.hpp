#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "entangle/diffcore/params.hpp"
#include "entangle/random.hpp"

namespace entangle::diffcore {

/// Loss evaluated at a parameter point together with its analytic gradient.
using LossFn = std::function<std::pair<double, GradientMap>(const ParameterSet&)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Coordinates with |analytic| and |numeric| both below this are compared
  /// absolutely instead of relatively.
  double abs_floor = 1e-7;
  /// 0 checks every coordinate; otherwise a seeded random subsample.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

/// Central differences per coordinate; returns the largest relative deviation
/// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
inline double finite_difference_check(const LossFn& loss_fn, const ParameterSet& params,
                                      const GradCheckOptions& opt = {}) {
  const GradientMap analytic = loss_fn(params).second;

  std::vector<std::pair<std::string, Eigen::Index>> coords;
  for (const auto& [name, m] : params)
    for (Eigen::Index k = 0; k < m.size(); ++k) coords.emplace_back(name, k);
  if (opt.max_coords != 0 && coords.size() > opt.max_coords) {
    Rng rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.max_coords);
  }

  ParameterSet probe = params;
  double worst = 0.0;
  for (const auto& [name, k] : coords) {
    double& slot = probe.at(name).data()[k];
    const double saved = slot;
    slot = saved + opt.epsilon;
    const double up = loss_fn(probe).first;
    slot = saved - opt.epsilon;
    const double down = loss_fn(probe).first;
    slot = saved;
    const double numeric = (up - down) / (2.0 * opt.epsilon);
    const double a = analytic.contains(name) ? analytic.at(name).data()[k] : 0.0;
    const double denom = std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace entangle::diffcore
