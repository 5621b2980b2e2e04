#pragma once

#include <cmath>
#include <cstddef>
#include <random>

#include "jiadf/tensor.hpp"

namespace jiadf {

using Rng = std::mt19937_64;

// sqrt(6 / (fan_in + fan_out)) for a rows x cols weight acting on cols inputs.
inline double glorot_bound(std::size_t rows, std::size_t cols) {
  return std::sqrt(6.0 / static_cast<double>(rows + cols));
}

inline Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = glorot_bound(rows, cols);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t({rows, cols});
  for (double& x : t.raw()) x = dist(rng);
  return t;
}

inline Tensor zeros(std::size_t n) { return Tensor({n}); }

inline Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

}  // namespace jiadf
