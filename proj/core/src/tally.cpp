#include "robust/tally.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace robust {

ErrorTally::ErrorTally(std::size_t m, double smoothing, double momentum)
    : m_(m), smoothing_(smoothing), momentum_(momentum), active_(m * m, 0.0), buffer_(m * m, 0) {}

ErrorTally ErrorTally::uniform(std::size_t m, double smoothing, double momentum) {
  if (m < 2) throw std::invalid_argument(fmt::format("error tally needs m >= 2, got {}", m));
  if (!(smoothing > 0.0)) throw std::invalid_argument("tally smoothing must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("tally momentum must be in [0, 1)");
  ErrorTally t(m, smoothing, momentum);
  for (std::size_t y = 0; y < m; ++y) {
    for (std::size_t k = 0; k < m; ++k) t.active_[y * m + k] = y == k ? 0.0 : 1.0;
  }
  return t;
}

void ErrorTally::require_class(std::size_t c) const {
  if (c >= m_) throw std::out_of_range(fmt::format("class {} outside [0, {})", c, m_));
}

void ErrorTally::record(std::size_t gold, std::size_t pred) {
  require_class(gold);
  require_class(pred);
  if (gold != pred) ++buffer_[gold * m_ + pred];
}

void ErrorTally::commit() {
  for (std::size_t y = 0; y < m_; ++y) {
    for (std::size_t k = 0; k < m_; ++k) {
      const std::size_t i = y * m_ + k;
      if (y == k) {
        active_[i] = 0.0;
        continue;
      }
      const double fresh = static_cast<double>(buffer_[i]) + smoothing_;
      active_[i] = momentum_ > 0.0 ? momentum_ * active_[i] + (1.0 - momentum_) * fresh : fresh;
    }
  }
  std::fill(buffer_.begin(), buffer_.end(), 0);
}

std::size_t ErrorTally::sample_target(std::size_t y, Rng& rng) const {
  require_class(y);
  return rng.weighted(std::span<const double>(active_).subspan(y * m_, m_));
}

std::vector<double> ErrorTally::target_distribution(std::size_t y) const {
  require_class(y);
  std::vector<double> row(active_.begin() + static_cast<std::ptrdiff_t>(y * m_),
                          active_.begin() + static_cast<std::ptrdiff_t>((y + 1) * m_));
  const double total = std::accumulate(row.begin(), row.end(), 0.0);
  for (double& v : row) v /= total;
  return row;
}

std::uint64_t ErrorTally::buffered_errors() const {
  return std::accumulate(buffer_.begin(), buffer_.end(), std::uint64_t{0});
}

void ErrorTally::set_active(std::vector<double> weights) {
  if (weights.size() != m_ * m_) throw std::invalid_argument("set_active: expected m*m weights");
  for (std::size_t y = 0; y < m_; ++y) {
    double row = 0.0;
    for (std::size_t k = 0; k < m_; ++k) {
      double& w = weights[y * m_ + k];
      if (y == k) w = 0.0;
      if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("set_active: invalid weight");
      row += w;
    }
    if (!(row > 0.0)) throw std::invalid_argument(fmt::format("set_active: row {} has no mass", y));
  }
  active_ = std::move(weights);
}

void RegressionBinner::validate() const {
  if (!(lo < hi)) throw std::invalid_argument("binner needs lo < hi");
  if (bins < 2) throw std::invalid_argument("binner needs at least two bins");
}

std::size_t RegressionBinner::quantize(double value) const {
  validate();
  if (std::isnan(value)) throw std::invalid_argument("cannot quantize NaN");
  const double t = std::floor((value - lo) / (hi - lo) * static_cast<double>(bins));
  if (t <= 0.0) return 0;
  if (t >= static_cast<double>(bins - 1)) return bins - 1;
  return static_cast<std::size_t>(t);
}

double RegressionBinner::sample(std::size_t index, Rng& rng) const {
  validate();
  if (index >= bins) throw std::out_of_range("bin index out of range");
  const double width = (hi - lo) / static_cast<double>(bins);
  const double left = lo + width * static_cast<double>(index);
  const double right = lo + width * static_cast<double>(index + 1);
  const double v = left + rng.uniform() * (right - left);
  return v < right ? v : std::nextafter(right, left);
}

}  // namespace robust
