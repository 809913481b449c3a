#pragma once

#include <cstdint>
#include <random>

#include "geomatch/tensor.hpp"

namespace geomatch {

/// Seedable generator with a fixed algorithm: std::mt19937_64 (whose output
/// sequence the C++ standard pins down) mapped to doubles through the top 53
/// bits. The standard distributions are avoided because their algorithms are
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1)
  Scalar uniform() { return static_cast<Scalar>((engine_() >> 11) * 0x1.0p-53); }
  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }
  // [0, n)
  std::size_t index(std::size_t n);
  // Standard normal via Box-Muller.
  Scalar normal();

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer over (seed, stream): derives independent sub-seeds so
/// that per-item streams do not depend on iteration order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace geomatch
