#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "factordiff/tensor.hpp"

namespace factordiff {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; mixes a 64-bit value into a well-distributed one.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Independent stream for (base seed, stream id). Used so per-sample and
/// per-epoch randomness does not depend on iteration order or worker count.
Rng make_stream(std::uint64_t seed, std::uint64_t stream) noexcept;

Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0);
std::vector<double> normal_vector(std::size_t n, Rng& rng, double stddev = 1.0);

}  // namespace factordiff
