#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace ps {

// All randomness in the pipeline flows through this wrapper. The standard
// distribution objects are implementation-defined, so uniform/normal draws
// are generated here with fixed algorithms to keep runs bit-reproducible
// across compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n >= 1. Rejection sampling, unbiased.
  uint64_t uniform_int(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return v % n;
  }

  int uniform_index(int n) { return static_cast<int>(uniform_int(static_cast<uint64_t>(n))); }

  // Standard normal via Box-Muller (no cached spare; keeps state minimal).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 gen_;
};

// FNV-1a, used for substream derivation and artifact provenance hashes.
inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Derives an independent named stream from a master seed. Substream names
// are stable strings like "train", "bgfit", "infer:3".
inline Rng substream(uint64_t master_seed, std::string_view name) {
  uint64_t h = fnv1a64(name);
  h ^= master_seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return Rng(h);
}

}  // namespace ps
