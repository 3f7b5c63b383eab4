#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace glcal {

// Distribution helpers built directly on the engine's raw output. The standard
// library's distributions are implementation-defined, so anything that must be
// reproducible across platforms (fold plans, splits, synthetic data) goes
// through this class instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound). `bound` must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal variate (Box-Muller, one value per call).
  double normal();

  /// Draws an index from unnormalized nonnegative weights.
  std::size_t categorical(std::span<const double> weights);

  /// Fisher-Yates shuffle of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

/// Combines a base seed with stream identifiers (splitmix64 finalizer per step).
std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> streams);

}  // namespace glcal
