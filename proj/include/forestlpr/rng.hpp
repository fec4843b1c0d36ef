#ifndef FORESTLPR_RNG_HPP
#define FORESTLPR_RNG_HPP

#include <cmath>
#include <cstdint>

namespace forestlpr {

// Deterministic generator with hand-rolled distributions so that seeded runs
// are reproducible independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  double gaussian() {
    // Box-Muller; one value per call keeps the stream simple.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Normal(0, sigma) truncated to [-2 sigma, 2 sigma].
  double truncated_normal(double sigma) {
    for (;;) {
      const double v = gaussian() * sigma;
      if (std::abs(v) <= 2.0 * sigma) return v;
    }
  }

  // Derive an independent stream (e.g. per submap) without consuming state.
  Rng fork(std::uint64_t salt) const {
    Rng r(state_ ^ (0xd6e8feb86659fd93ull * (salt + 1)));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace forestlpr

#endif
