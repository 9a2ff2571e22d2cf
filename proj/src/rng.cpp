#include "swardmix/rng.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace swardmix {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform(double lo, double hi) {
  // 53 random bits -> [0, 1); avoids generate_canonical returning 1.0.
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::size_t Rng::index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

double Rng::beta(double a, double b) {
  if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("beta: parameters must be positive");
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(engine_);
  const double y = gb(engine_);
  const double s = x + y;
  // Both gammas underflow only for tiny shape parameters.
  return s > 0.0 ? x / s : (uniform() < a / (a + b) ? 1.0 : 0.0);
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::shuffle(p.begin(), p.end(), engine_);
  return p;
}

}  // namespace swardmix
