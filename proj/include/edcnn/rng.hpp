#pragma once

#include <cstdint>
#include <random>

namespace edcnn {

/// splitmix64 finalizer over (seed, stream, index); gives independent child seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

/// Seeded generator with distribution code of our own, so sequences do not depend
/// on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace edcnn
