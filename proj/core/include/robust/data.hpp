#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "robust/rng.hpp"
#include "robust/tensor.hpp"

namespace robust {

struct Example {
  Tensor x;
  std::size_t y = 0;
};

enum class Generator { kBlobs, kMoons, kSpiral };

std::string_view to_string(Generator g);
Generator parse_generator(std::string_view s);

/// Label-preserving input transform used as a controllable domain shift.
struct ShiftSpec {
  double rotation_deg = 30.0;       ///< about the centroid, in the first two coordinates
  std::vector<double> translation;  ///< empty means zero
  double extra_noise = 0.0;         ///< std-dev of added Gaussian noise

  bool operator==(const ShiftSpec&) const = default;
};

struct DatasetSpec {
  Generator generator = Generator::kBlobs;
  std::size_t n_points = 200;
  std::size_t n_features = 2;
  std::size_t n_classes = 2;
  double noise = 0.3;         ///< σ_data
  std::uint64_t seed = 0;
  bool resample_per_seed = true;  ///< mix the run seed into the data stream
  ShiftSpec shift;

  /// Blobs: any n_features ≥ 1, any n_classes ≥ 2. Moons: 2 features, 2
  /// classes. Spiral: 2 features. Always n_points ≥ 10·n_classes.
  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
  std::vector<Example> train;  ///< first 80% of the shuffled points
  std::vector<Example> test;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
};

/// Deterministic in the rng state. Labels are balanced by construction.
Dataset generate(const DatasetSpec& spec, Rng& rng);

/// The data stream a run with `run_seed` uses for `spec`.
Rng data_stream(const DatasetSpec& spec, std::uint64_t run_seed);

/// Rotates about the centroid of `examples`, translates, then adds noise.
std::vector<Example> apply_shift(std::span<const Example> examples, const ShiftSpec& shift, Rng& rng);

}  // namespace robust
