#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace swardmix {

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Deterministic generator over a 64-bit Mersenne Twister.
///
/// Streams are reproducible per seed with the same standard library; they are
/// not meant to match other implementations draw for draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Child generator for (stream) without disturbing this one's state.
  Rng fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

  /// Uniform in [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Beta(a, b) via the gamma ratio X/(X+Y), X~Gamma(a), Y~Gamma(b).
  double beta(double a, double b);
  /// Uniformly random permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace swardmix
