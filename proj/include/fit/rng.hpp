#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "fit/tensor.hpp"

namespace fit {

// Deterministic RNG used everywhere a random number is needed. Wraps
// std::mt19937_64 but maps to floats/ints by hand so the stream of values is
// fixed by the seed alone, independent of the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : engine_(seed), seed_mix_(seed * 0x9e3779b97f4a7c15ULL + 0x6a09e667f3bcc908ULL) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [lo, hi)
  float uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
  }

  // [0, n). Modulo bias is negligible for the small ranges used here.
  int below(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  // Derived, independent stream; lets components draw without perturbing
  // each other's sequences.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t s = seed_mix_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    s ^= s >> 30;
    s *= 0xbf58476d1ce4e5b9ULL;
    s ^= s >> 27;
    return Rng(s);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_mix_;
};

inline void fill_uniform(Tensor& t, Rng& rng, float lo, float hi) {
  for (float& v : t.values()) v = rng.uniform(lo, hi);
}

// He-style uniform init for a [out, in] or [in, out] weight matrix given its
// fan-in; bound = sqrt(6 / fan_in).
inline void fill_kaiming_uniform(Tensor& t, Rng& rng, int fan_in) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  fill_uniform(t, rng, -bound, bound);
}

// Fisher-Yates shuffle driven by the deterministic stream above.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(static_cast<int>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace fit
