// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace linkedout {

// Seeded generator with hand-rolled value mappings. std::* distributions are
// implementation-defined, so every draw here is spelled out to keep corpora,
// weights and shuffles identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  uint64_t index(uint64_t n) {
    uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent stream derived from the current state; advances this one.
  Rng fork(uint64_t stream) {
    uint64_t s = next_u64() ^ (stream * 0x9e3779b97f4a7c15ull + 0xbf58476d1ce4e5b9ull);
    return Rng(s);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace linkedout
