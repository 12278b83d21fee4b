#pragma once

#include <cstdint>
#include <random>

namespace sensorbp {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Sub-seed for stream `tag` of `seed`. Every derived random stream in the
/// project comes from this rule, so a single top-level seed reproduces a run.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag + 0x632BE59BD9B4E019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t sub) {
  return derive_seed(derive_seed(seed, tag), sub);
}

/// mt19937_64 with portable (library-independent) draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sensorbp
