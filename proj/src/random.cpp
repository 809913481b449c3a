#include "geomatch/random.hpp"

#include <cmath>
#include <numbers>

namespace geomatch {

std::size_t Rng::index(std::size_t n) {
  if (n <= 1) return 0;
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

Scalar Rng::normal() {
  Scalar u1 = uniform();
  while (u1 <= Scalar(0)) u1 = uniform();
  const Scalar u2 = uniform();
  return std::sqrt(Scalar(-2) * std::log(u1)) * std::cos(2 * std::numbers::pi_v<Scalar> * u2);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace geomatch
