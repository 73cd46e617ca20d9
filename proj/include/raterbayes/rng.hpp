// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace raterbayes {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random stream. Every stochastic component owns one of these, so
/// runs are reproducible from a single seed and streams never share state.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix_seed(seed)), seed_(seed) {}

  /// Independent child stream keyed by (seed, stream id).
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    return Rng(mix_seed(seed ^ mix_seed(stream + 0x51ed2701ULL)));
  }

  Rng split(std::uint64_t stream) const { return derive(seed_, stream); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }
  std::uint64_t seed() const { return seed_; }

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uint64_t seed_;
};

} // namespace raterbayes
