#pragma once

#include <cstdint>
#include <random>

// Seeded random number generation with hand-rolled distributions. The
// std::mt19937_64 engine is specified bit-exactly by the standard; the
// distributions in <random> are not, so uniform/normal draws are produced
// here to keep record files reproducible across standard libraries.

namespace ep {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Derives an independent stream seed from a root seed and up to two indices.
inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = root;
  std::uint64_t h = detail::splitmix64(s);
  s ^= a + 0x632be59bd9b4e019ULL;
  h ^= detail::splitmix64(s);
  s ^= b + 0x9e3779b97f4a7c15ULL;
  h ^= detail::splitmix64(s);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  /// Uniform on (0, 1] with 53-bit resolution.
  double uniform01() {
    return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller; two uniforms per draw, no cached spare.
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  bool bernoulli(double p) { return uniform01() <= p; }

  /// Uniform integer in [lo, hi], rejection-sampled to avoid modulo bias.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    const std::uint64_t range = hi - lo + 1;
    if (range == 0) return gen_();  // full 64-bit range
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t draw;
    do {
      draw = gen_();
    } while (draw >= limit);
    return lo + draw % range;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace ep
