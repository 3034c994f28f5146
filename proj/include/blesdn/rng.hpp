#pragma once

#include <cstdint>
#include <random>

namespace blesdn {

/// Seeded stream with platform-independent draws. std::mt19937_64 output is
/// fixed by the standard; the distributions here are spelled out so results
/// do not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : gen_(mix(seed ^ mix(stream + 0x9E3779B97F4A7C15ULL))) {}

  std::uint64_t next() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform in [0, n); n == 0 yields 0.
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : gen_() % n; }

  bool bernoulli(double p) { return p > 0.0 && uniform() < p; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  std::mt19937_64 gen_;
};

// stream ids
inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kControlStream = 2;

}  // namespace blesdn
