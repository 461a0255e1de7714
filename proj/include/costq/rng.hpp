#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace costq {

/// Mixes a base seed with stream identifiers (fold index, grid cell, ...) so that
/// every parallel unit owns an independent, schedule-independent stream.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

/// Seeded 64-bit Mersenne twister with the handful of draws the simulators need.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double sd) { return std::normal_distribution<double>(mean, sd)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Index drawn from an unnormalised discrete distribution.
  template <typename Probs>
  int categorical(const Probs& probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    double u = uniform() * total;
    int k = 0;
    for (double p : probs) {
      if (u < p) return k;
      u -= p;
      ++k;
    }
    return k - 1;
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace costq
