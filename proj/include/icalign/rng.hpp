#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace icalign {

// Unbiased draw in [0, n). std::uniform_int_distribution is
// implementation-defined, so shuffles built on it differ across standard
// libraries; this one does not.
inline std::uint64_t bounded_rand(std::mt19937_64& rng, std::uint64_t n) {
  if (n < 2) return 0;
  const std::uint64_t threshold = (std::uint64_t{0} - n) % n;  // 2^64 mod n
  for (;;) {
    const std::uint64_t x = rng();
    if (x >= threshold) return x % n;
  }
}

// Fisher-Yates with the bounded draw above: same seed, same permutation,
// on every platform.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(bounded_rand(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

// Uniform double in [lo, hi) with 53-bit resolution.
inline double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

}  // namespace icalign
