#include "factordiff/random.hpp"

namespace factordiff {

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng make_stream(std::uint64_t seed, std::uint64_t stream) noexcept {
  return Rng(mix64(mix64(seed) ^ mix64(stream + 0x5851f42d4c957f2dULL)));
}

std::vector<double> normal_vector(std::size_t n, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(n);
  for (double& v : out) {
    v = dist(rng);
  }
  return out;
}

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), normal_vector(n, rng, stddev));
}

}  // namespace factordiff
