#pragma once

#include <cstdint>

namespace intake {

/// Counter-based generator: draw i of a stream is a pure function of
/// (seed, i), so values never depend on platform or library versions.
/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), key_(mix64(seed)), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return bits_at(counter_++); }
  double uniform() { return uniform_at(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);

  /// Random-access draws; do not advance the counter.
  std::uint64_t bits_at(std::uint64_t index) const { return mix64(key_ + (index + 1) * kGamma); }
  double uniform_at(std::uint64_t index) const { return static_cast<double>(bits_at(index) >> 11) * 0x1.0p-53; }

  /// Independent child stream keyed by `key`.
  RngStream split(std::uint64_t key) const;

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace intake
