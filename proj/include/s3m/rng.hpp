#pragma once

#include <cstdint>
#include <vector>

namespace s3m {

// Deterministic PRNG with a fixed, platform-independent output stream.
// std::mt19937_64 is pinned by the standard, but the distribution adaptors
// are not, so the double/int conversions are done by hand here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

  std::uint64_t next_u64() {
    // xorshift64* — small, fast, and reproducible everywhere.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n). n must be > 0.
  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % n);
  }

  // Fisher–Yates; std::shuffle is implementation-defined, this is not.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = next_index(i + 1);
      if (i != j) std::swap(v[i], v[j]);
    }
  }

  // Derive an independent stream, e.g. one per epoch.
  Rng fork() { return Rng(next_u64()); }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    x = x ^ (x >> 31);
    return x == 0 ? 0x9E3779B97F4A7C15ULL : x;
  }

  std::uint64_t state_;
};

}  // namespace s3m
