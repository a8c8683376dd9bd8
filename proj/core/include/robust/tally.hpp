#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "robust/rng.hpp"

namespace robust {

/// Running confusion tally e(y, y_t) that drives targeted-adversary sampling.
///
/// Misclassifications are counted into an epoch buffer; commit() turns the
/// buffer into the active sampling weights (counts plus Laplace smoothing on
/// the off-diagonal). Weights are stored unnormalized; only the per-row
/// proportions are meaningful.
class ErrorTally {
 public:
  /// Every off-diagonal weight equal. Throws std::invalid_argument if m < 2.
  static ErrorTally uniform(std::size_t m, double smoothing = 1.0, double momentum = 0.0);

  std::size_t num_classes() const { return m_; }
  double smoothing() const { return smoothing_; }
  double momentum() const { return momentum_; }

  /// Counts (gold, pred) into the epoch buffer when pred != gold.
  void record(std::size_t gold, std::size_t pred);

  /// active ← buffer + λ off-diagonal (blended with the previous weights when
  /// momentum > 0); buffer ← 0.
  void commit();

  /// y_t ∈ C∖{y} with P(y_t = k) ∝ active(y, k).
  std::size_t sample_target(std::size_t y, Rng& rng) const;

  /// Normalized sampling law of row y; entry y is zero.
  std::vector<double> target_distribution(std::size_t y) const;

  double active(std::size_t gold, std::size_t target) const { return active_[gold * m_ + target]; }
  std::uint64_t buffered(std::size_t gold, std::size_t pred) const { return buffer_[gold * m_ + pred]; }
  std::uint64_t buffered_errors() const;
  const std::vector<double>& active_weights() const { return active_; }
  const std::vector<std::uint64_t>& buffer() const { return buffer_; }

  /// Replaces the active weights directly; used for fixed prior confusions.
  void set_active(std::vector<double> weights);

 private:
  ErrorTally(std::size_t m, double smoothing, double momentum);
  void require_class(std::size_t c) const;

  std::size_t m_;
  double smoothing_;
  double momentum_;
  std::vector<double> active_;
  std::vector<std::uint64_t> buffer_;
};

/// Quantizes a regression target into equal-width bins so the classification
/// machinery (tally, targeted sampling) applies.
struct RegressionBinner {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t bins = 10;

  void validate() const;
  /// floor((v − lo)/(hi − lo)·bins), clamped to [0, bins − 1].
  std::size_t quantize(double value) const;
  /// Uniform draw in bin `index`'s half-open interval.
  double sample(std::size_t index, Rng& rng) const;
};

}  // namespace robust
