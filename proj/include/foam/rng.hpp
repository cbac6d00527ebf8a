#pragma once

#include <cstdint>
#include <random>

namespace foam {

/// Seeded random source. One instance per independent stream; never shared
/// across threads. All stochastic code in the library draws through this so
/// that a (config, seed) pair reproduces bitwise.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  /// Inclusive range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  std::uint64_t next_u64() { return engine_(); }

  std::uint64_t seed() const { return seed_; }

  /// Derive an independent child stream, e.g. per scene or per training step.
  /// Depends only on the constructor seed, not on how much the parent drew.
  Rng fork(std::uint64_t salt) const { return Rng(mix(seed_, salt)); }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 round over the combined value
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace foam
