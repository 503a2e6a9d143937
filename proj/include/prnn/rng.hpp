// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random numbers. All draws go through this wrapper so that a
// seed produces the same byte stream on every platform: mt19937_64 has a
// standard-pinned sequence, and the distributions below avoid the
// implementation-defined std::*_distribution classes.

#pragma once

#include <cstdint>
#include <random>

namespace prnn {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Stateless stream addressing: one root seed plus (stream tag, index) fully
// determines a batch, so training can resume at any iteration without
// serializing generator state.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream, uint64_t index) {
  return splitmix64(splitmix64(seed ^ (stream * 0x9e3779b97f4a7c15ull)) ^ index);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(splitmix64(seed)) {}

  uint64_t next() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Rejection keeps the distribution exact.
  int uniform_int(int n) {
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace prnn
