#pragma once

#include <cstdint>

namespace voxattn {

// Deterministic PRNG with a fixed algorithm so that streams are identical
// across compilers and standard libraries: a splitmix64 walk, normals via
// Box-Muller, uniforms via the 53-bit mantissa trick.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Warm up through splitmix64 so nearby seeds diverge immediately.
    state_ = splitmix64(state_);
  }

  // Derives an independent stream from (seed, stream ids), used for
  // per-sample and per-epoch reproducibility.
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t s = splitmix64(seed ^ (0x9e3779b97f4a7c15ULL + a));
    s = splitmix64(s ^ (0xbf58476d1ce4e5b9ULL * (b + 1)));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ = splitmix64_step(state_);
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Modulo bias is negligible for n << 2^64 and keeps the stream simple.
    return next_u64() % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; one value per call, the pair is cached.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
  static std::uint64_t splitmix64_step(std::uint64_t x) { return x + 0x9e3779b97f4a7c15ULL; }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t splitmix64(std::uint64_t x) { return mix(splitmix64_step(x)); }

  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace voxattn
