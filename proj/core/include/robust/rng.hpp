#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace robust {

/// Seeded pseudo-random stream. Two streams built from the same
/// (seed, name) pair produce identical sequences.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::string_view stream = "default");

  double normal();
  double normal(double mean, double stddev);
  /// Uniform on [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0);
  std::size_t index(std::size_t n);
  /// Index drawn with probability proportional to `weights` (nonnegative,
  /// positive total).
  std::size_t weighted(std::span<const double> weights);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// FNV-1a over bytes; stable across platforms and runs.
std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// The named streams a training run draws from. Each is independent, so
/// changing how one consumer draws leaves every other stream untouched.
struct RunStreams {
  explicit RunStreams(std::uint64_t seed);

  Rng init;       ///< weight initialization
  Rng order;      ///< minibatch shuffling
  Rng noise;      ///< PDM noise and VAT start directions
  Rng adversary;  ///< PGD initializations
  Rng tally;      ///< TAT target sampling
};

}  // namespace robust
