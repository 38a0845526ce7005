#pragma once
#include <cmath>
#include <cstdint>

namespace cubecast {

// splitmix64 step: advances the state and returns a scrambled 64-bit value.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Per-sample / per-epoch stream derivation. Documented contract: the derived
// seed is splitmix64 applied to master + golden_ratio * (index + 1), so streams
// for different indices are decorrelated and reproducible on any platform.
inline uint64_t mix_seed(uint64_t master, uint64_t index) {
  uint64_t s = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  return splitmix64(s);
}

// Deterministic RNG. All randomness in the project flows through this type so
// that datasets, initializations and shuffles are bit-reproducible; the C++
// standard does not pin down <random> distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is < 2^-53 for any n we use.
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n));
  }

  // Standard normal via Box-Muller (both values used).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Truncated normal: resample until |z| <= 2, then scale by sigma.
  double trunc_normal(double sigma) {
    double z = normal();
    while (std::fabs(z) > 2.0) z = normal();
    return z * sigma;
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cubecast
