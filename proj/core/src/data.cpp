#include "robust/data.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

namespace robust {

std::string_view to_string(Generator g) {
  switch (g) {
    case Generator::kBlobs: return "blobs";
    case Generator::kMoons: return "moons";
    case Generator::kSpiral: return "spiral";
  }
  return "unknown";
}

Generator parse_generator(std::string_view s) {
  if (s == "blobs") return Generator::kBlobs;
  if (s == "moons") return Generator::kMoons;
  if (s == "spiral") return Generator::kSpiral;
  throw std::invalid_argument(fmt::format("unknown generator '{}' (blobs|moons|spiral)", s));
}

void DatasetSpec::validate() const {
  if (n_classes < 2) throw std::invalid_argument("dataset.n_classes must be >= 2");
  if (n_features < 1) throw std::invalid_argument("dataset.n_features must be >= 1");
  if (n_points < 10 * n_classes) {
    throw std::invalid_argument(
        fmt::format("dataset.n_points must be >= 10 * n_classes ({}), got {}", 10 * n_classes, n_points));
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("dataset.noise must be nonnegative");
  if (generator == Generator::kMoons && (n_classes != 2 || n_features != 2)) {
    throw std::invalid_argument("moons needs n_classes = 2 and n_features = 2");
  }
  if (generator == Generator::kSpiral && n_features != 2) {
    throw std::invalid_argument("spiral needs n_features = 2");
  }
  if (!shift.translation.empty() && shift.translation.size() != n_features) {
    throw std::invalid_argument("dataset.shift_translation length must equal n_features");
  }
  if (!(shift.extra_noise >= 0.0)) throw std::invalid_argument("dataset.shift_noise must be nonnegative");
}

namespace {

std::vector<double> blob_center(std::size_t k, std::size_t m, std::size_t n) {
  std::vector<double> c(n, 0.0);
  if (n == 1) {
    c[0] = static_cast<double>(k) - 0.5 * static_cast<double>(m - 1);
    return c;
  }
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(m);
  c[0] = std::cos(angle);
  c[1] = std::sin(angle);
  return c;
}

std::vector<double> clean_point(const DatasetSpec& spec, std::size_t label, std::size_t rank,
                                std::size_t per_class) {
  const double t = per_class > 1 ? static_cast<double>(rank) / static_cast<double>(per_class - 1) : 0.0;
  switch (spec.generator) {
    case Generator::kBlobs:
      return blob_center(label, spec.n_classes, spec.n_features);
    case Generator::kMoons: {
      const double a = std::numbers::pi * t;
      if (label == 0) return {std::cos(a), std::sin(a)};
      return {1.0 - std::cos(a), 0.5 - std::sin(a)};
    }
    case Generator::kSpiral: {
      const double arm = 2.0 * std::numbers::pi / static_cast<double>(spec.n_classes);
      const double angle = static_cast<double>(label) * arm + 4.0 * t;
      return {t * std::sin(angle), t * std::cos(angle)};
    }
  }
  return {};
}

}  // namespace

Dataset generate(const DatasetSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t m = spec.n_classes;
  std::vector<Example> all;
  all.reserve(spec.n_points);
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    const std::size_t label = i % m;
    const std::size_t rank = i / m;
    const std::size_t per_class = (spec.n_points - label + m - 1) / m;
    std::vector<double> p = clean_point(spec, label, rank, per_class);
    if (spec.noise > 0.0) {
      for (double& v : p) v += spec.noise * rng.normal();
    }
    all.push_back({Tensor::vector(std::move(p)), label});
  }
  for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.index(i)]);

  Dataset data;
  data.n_features = spec.n_features;
  data.n_classes = m;
  const std::size_t n_train = spec.n_points * 4 / 5;
  data.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  data.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  return data;
}

Rng data_stream(const DatasetSpec& spec, std::uint64_t run_seed) {
  const std::uint64_t mixed =
      spec.resample_per_seed ? spec.seed ^ (run_seed * 0x9e3779b97f4a7c15ULL) : spec.seed;
  return Rng(mixed, "data");
}

std::vector<Example> apply_shift(std::span<const Example> examples, const ShiftSpec& shift, Rng& rng) {
  std::vector<Example> out(examples.begin(), examples.end());
  if (out.empty()) return out;
  const std::size_t n = out.front().x.size();
  std::vector<double> centroid(n, 0.0);
  for (const auto& e : out) {
    for (std::size_t j = 0; j < n; ++j) centroid[j] += e.x[j];
  }
  for (double& c : centroid) c /= static_cast<double>(out.size());

  const double angle = shift.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);
  for (auto& e : out) {
    std::vector<double> p(e.x.values().begin(), e.x.values().end());
    if (n >= 2) {
      const double dx = p[0] - centroid[0];
      const double dy = p[1] - centroid[1];
      p[0] = centroid[0] + cs * dx - sn * dy;
      p[1] = centroid[1] + sn * dx + cs * dy;
    }
    for (std::size_t j = 0; j < shift.translation.size() && j < n; ++j) p[j] += shift.translation[j];
    if (shift.extra_noise > 0.0) {
      for (double& v : p) v += shift.extra_noise * rng.normal();
    }
    e.x = Tensor::vector(std::move(p));
  }
  return out;
}

}  // namespace robust
