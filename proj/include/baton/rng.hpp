// Deterministic PRNG. SplitMix64 so the same seed reproduces the same
// stream on every platform, independent of libstdc++'s distributions.
#pragma once

#include <cmath>
#include <cstdint>

namespace baton {

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Box-Muller; consumes exactly two uniforms per draw (no cached spare,
  // so interleaved uniform/normal draws stay reproducible).
  double normal(double sigma = 1.0) {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return sigma * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

// Seed for a child stream (per-sample, per-component...). Depends only on
// (master, salt), never on how far any stream has been consumed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  RngStream s(master ^ (0x9e3779b97f4a7c15ull * (salt + 1)));
  return s.next_u64();
}

}  // namespace baton
