#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "factordiff/graph.hpp"
#include "factordiff/random.hpp"

namespace fdtest {

using factordiff::ParameterSet;
using factordiff::Tensor;

/// Replaces every parameter with N(0, stddev) draws (so zero-initialized
/// gates and projections do not hide gradient paths).
inline ParameterSet randomized(const ParameterSet& params, std::uint64_t seed, double stddev) {
  factordiff::Rng rng(seed);
  ParameterSet out;
  for (const auto& [name, value] : params) {
    out.emplace(name, factordiff::normal_tensor(value.shape(), rng, stddev));
  }
  return out;
}

inline Tensor random_tensor(factordiff::Shape shape, std::uint64_t seed, double stddev = 1.0) {
  factordiff::Rng rng(seed);
  return factordiff::normal_tensor(std::move(shape), rng, stddev);
}

}  // namespace fdtest
