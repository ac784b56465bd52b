#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace semcsi {

/// Seedable random source whose complete state is the engine state.
///
/// Distributions are constructed per draw so no hidden cached variates
/// survive between calls; saving `state()` and restoring it later resumes
/// the exact same stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent substream for (seed, index), e.g. one per dataset sample.
  static Rng substream(std::uint64_t seed, std::uint64_t index);

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Integer uniform in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  /// Standard Gumbel(0, 1) variate.
  double gumbel();

  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace semcsi
