#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "entangle/random.hpp"

namespace entangle {

/// Node-level train/validation/test partition. Every model sees the whole
/// graph; losses and metrics only read their own subset.
struct UnitSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;

  void validate() const {
    if (!(train > 0 && validation > 0 && test > 0))
      throw std::invalid_argument("split fractions must be positive");
    if (std::abs(train + validation + test - 1.0) > 1e-9)
      throw std::invalid_argument("split fractions must sum to 1");
  }
};

inline UnitSplit make_split(std::size_t n_units, const SplitFractions& f, std::uint64_t seed) {
  f.validate();
  std::vector<std::size_t> perm(n_units);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_stream(seed, {tag("split")});
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n_units; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(n_units)));
  const auto n_val = static_cast<std::size_t>(std::floor(f.validation * static_cast<double>(n_units)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n_units)
    throw std::invalid_argument("make_split: too few units for the requested fractions");
  UnitSplit s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                      perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace entangle
