#include "robust/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include "json.hpp"

namespace robust {

namespace {

constexpr double kExactSlack = 1e-12;

class InstanceHash {
 public:
  InstanceHash& add(std::span<const double> values) {
    for (double v : values) add(v);
    return *this;
  }
  InstanceHash& add(double v) {
    char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    h_ = stable_hash(std::string_view(bytes, sizeof bytes), h_);
    return *this;
  }
  InstanceHash& add(const MlpClassifier& model) {
    for (auto d : model.layer_dims()) add(static_cast<double>(d));
    return add(model.flat_parameters());
  }
  std::string str() const { return fmt::format("{:016x}", h_); }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

bool holds(double lhs, double rhs) { return lhs <= rhs * (1.0 + kExactSlack) + kExactSlack; }

// expm1(u) − u without cancellation for small u.
double expm1_minus_id(double u) {
  if (std::abs(u) < 1e-3) return u * u * (0.5 + u * (1.0 / 6.0 + u * (1.0 / 24.0 + u / 120.0)));
  return std::expm1(u) - u;
}

// KL(softmax(a) ‖ softmax(b)) through the logit difference d = a − b, so both
// terms stay second order in d and tiny divergences keep full precision.
double kl_of_logits(const Tensor& a, const Tensor& b) {
  const Tensor lq = log_softmax(b);
  const std::size_t m = lq.size();
  std::vector<double> q(m), d(m);
  double mean_d = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    q[i] = std::exp(lq[i]);
    d[i] = a[i] - b[i];
    mean_d += q[i] * d[i];
  }
  double g = 0.0;
  for (std::size_t i = 0; i < m; ++i) g += q[i] * expm1_minus_id(d[i] - mean_d);
  const double centered_lse = std::log1p(g);
  double total = -centered_lse;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = d[i] - mean_d - centered_lse;
    total += q[i] * std::expm1(r) * r;
  }
  return std::max(0.0, total);
}

Tensor shifted(const Tensor& x, std::span<const double> dir, double c) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += c * dir[i];
  return Tensor(x.shape(), std::move(v));
}

double frobenius_sq(const Tensor& j) {
  double s = 0.0;
  for (double v : j.values()) s += v * v;
  return s;
}

Tensor matvec_span(const Tensor& j, std::span<const double> v) {
  return matvec(j, Tensor::vector(std::vector<double>(v.begin(), v.end())));
}

// All 2ⁿ sign vectors.
std::vector<std::vector<double>> corners(std::size_t n) {
  std::vector<std::vector<double>> out;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = (mask >> i) & 1 ? 1.0 : -1.0;
    out.push_back(std::move(s));
  }
  return out;
}

// Grid on the ℓ∞ unit sphere: each face {ε_i = ±1} gets k^(n−1) points with
// k ≈ resolution^(1/(n−1)), endpoints included.
std::vector<std::vector<double>> sphere_grid(std::size_t n, std::size_t resolution) {
  std::vector<std::vector<double>> pts = corners(n);
  if (n == 1) return pts;
  const auto k = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::lround(std::pow(static_cast<double>(resolution), 1.0 / static_cast<double>(n - 1)))));
  std::vector<double> axis(k);
  for (std::size_t t = 0; t < k; ++t) axis[t] = -1.0 + 2.0 * static_cast<double>(t) / static_cast<double>(k - 1);
  std::size_t per_face = 1;
  for (std::size_t d = 0; d + 1 < n; ++d) per_face *= k;
  for (std::size_t fixed = 0; fixed < n; ++fixed) {
    for (double sign : {-1.0, 1.0}) {
      for (std::size_t idx = 0; idx < per_face; ++idx) {
        std::vector<double> p(n);
        std::size_t rest = idx;
        for (std::size_t d = 0; d < n; ++d) {
          if (d == fixed) {
            p[d] = sign;
          } else {
            p[d] = axis[rest % k];
            rest /= k;
          }
        }
        pts.push_back(std::move(p));
      }
    }
  }
  return pts;
}

double weighted_trace(const JacobianMatrix& j, const Tensor& f) {
  double total = 0.0;
  for (std::size_t i = 0; i < j.rows(); ++i) {
    double row = 0.0;
    for (std::size_t c = 0; c < j.cols(); ++c) row += j.at(i, c) * j.at(i, c);
    total += row / f[i];
  }
  return total;
}

std::vector<double> random_unit(std::size_t n, Rng& rng) {
  std::vector<double> d(n, 0.0);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& v : d) v = rng.normal();
    norm = l2_norm(d);
  }
  for (double& v : d) v /= norm;
  return d;
}

}  // namespace

std::string CheckReport::to_line() const {
  std::string line = fmt::format("check={} instance={} lhs={:.17g} rhs={:.17g} margin={:.17g} tol={:.6g} pass={}",
                                 name, instance, lhs, rhs, margin, tolerance, pass ? 1 : 0);
  if (!note.empty()) line += fmt::format(" note=\"{}\"", note);
  return line;
}

double induced_inf_norm(const Tensor& j) {
  if (j.size() == 0) throw std::invalid_argument("induced_inf_norm: empty matrix");
  double best = 0.0;
  for (std::size_t r = 0; r < j.rows(); ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < j.cols(); ++c) row += std::abs(j.at(r, c));
    best = std::max(best, row);
  }
  return best;
}

double induced_inf_norm_brute_force(const Tensor& j) {
  if (j.cols() > 20) throw std::invalid_argument("brute force limited to n <= 20");
  double best = 0.0;
  for (const auto& s : corners(j.cols())) {
    double worst_row = 0.0;
    for (std::size_t r = 0; r < j.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < j.cols(); ++c) dot += j.at(r, c) * s[c];
      worst_row = std::max(worst_row, std::abs(dot));
    }
    best = std::max(best, worst_row);
  }
  return best;
}

CheckReport check_frobenius_vs_inf(const Tensor& j) {
  CheckReport r;
  r.name = "frobenius_vs_inf";
  r.instance = InstanceHash().add(j.values()).str();
  const double inf = induced_inf_norm(j);
  r.lhs = frobenius_sq(j);
  r.rhs = static_cast<double>(j.rows()) * inf * inf;
  r.margin = r.rhs - r.lhs;
  r.tolerance = kExactSlack;
  r.pass = holds(r.lhs, r.rhs);
  return r;
}

CheckReport check_pinsker(const Tensor& p, const Tensor& q) {
  CheckReport r;
  r.name = "pinsker";
  r.instance = InstanceHash().add(p.values()).add(q.values()).str();
  if (p.size() != q.size()) throw std::invalid_argument("check_pinsker: length mismatch");
  std::vector<double> diff(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) diff[i] = p[i] - q[i];
  const double l1 = l1_norm(diff);
  r.lhs = l1 * l1;
  r.rhs = 2.0 * kl_divergence(p, q);
  r.margin = r.rhs - r.lhs;
  r.tolerance = kExactSlack;
  const bool norm_order = linf_norm(diff) <= l1 + kExactSlack;
  r.pass = holds(r.lhs, r.rhs) && norm_order;
  if (!norm_order) r.note = "sup norm exceeds l1 norm";
  return r;
}

CheckReport check_linear_bound(const Tensor& j, std::span<const double> eps, double c) {
  if (eps.size() != j.cols()) throw std::invalid_argument("check_linear_bound: direction length");
  CheckReport r;
  r.name = "linear_bound";
  r.instance = InstanceHash().add(j.values()).add(eps).add(c).str();
  const Tensor je = scale(matvec_span(j, eps), c);
  const double e = l2_norm(eps);
  r.lhs = norm_sq(je).item();
  r.rhs = c * c * e * e * frobenius_sq(j);
  r.margin = r.rhs - r.lhs;
  r.tolerance = kExactSlack;
  r.pass = holds(r.lhs, r.rhs);
  return r;
}

CheckReport check_induced_norm(const Tensor& j) {
  CheckReport r;
  r.name = "induced_norm";
  r.instance = InstanceHash().add(j.values()).str();
  r.lhs = induced_inf_norm(j);
  r.rhs = induced_inf_norm_brute_force(j);
  r.margin = -std::abs(r.lhs - r.rhs);
  r.tolerance = kExactSlack * std::max(1.0, r.rhs);
  r.pass = std::abs(r.lhs - r.rhs) <= r.tolerance;
  return r;
}

CheckReport check_column_sums(const MlpClassifier& model, const Tensor& x) {
  CheckReport r;
  r.name = "column_sums";
  r.instance = InstanceHash().add(model).add(x.values()).str();
  r.lhs = input_output_jacobian(model, x).max_abs_column_sum();
  r.rhs = 1e-10;
  r.margin = r.rhs - r.lhs;
  r.tolerance = 1e-10;
  r.pass = r.lhs <= r.rhs;
  return r;
}

CheckReport check_chain(const MlpClassifier& model, const Tensor& x, double c, std::size_t grid_resolution) {
  const std::size_t n = model.input_dim();
  if (n > 3) throw std::invalid_argument("instance too large for grid oracle");
  if (!(c >= 0.0)) throw std::invalid_argument("check_chain: c must be nonnegative");
  CheckReport r;
  r.name = "chain";
  r.instance = InstanceHash().add(model).add(x.values()).add(c).str();
  const JacobianMatrix j = input_output_jacobian(model, x);
  const Tensor clean = model.logits(x);
  double sup = 0.0;
  for (const auto& eps : sphere_grid(n, grid_resolution)) {
    sup = std::max(sup, kl_of_logits(clean, model.logits(shifted(x, eps, c))));
  }
  const double m = static_cast<double>(model.num_classes());
  r.lhs = c * c * j.frobenius_sq();
  r.rhs = 2.0 * m * sup;
  r.tolerance = 10.0 * c;
  const double slack_rhs = r.rhs * (1.0 + r.tolerance);
  r.margin = c > 0.0 ? (slack_rhs - r.lhs) / (c * c) : 0.0;
  r.pass = r.lhs <= slack_rhs;
  if (j.max_abs_column_sum() > 1e-10) {
    r.pass = false;
    r.note = "jacobian column sums not zero";
  } else if (c > 1e-2) {
    r.note = "c above 1e-2, outside the linearization regime";
  }
  return r;
}

double chain_limit_margin(const MlpClassifier& model, const Tensor& x) {
  const JacobianMatrix j = input_output_jacobian(model, x);
  const Tensor f = model.forward(x);
  double best = 0.0;
  for (const auto& s : corners(model.input_dim())) {
    const Tensor v = matvec_span(j.values, s);
    double q = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) q += v[i] * v[i] / f[i];
    best = std::max(best, q);
  }
  return static_cast<double>(model.num_classes()) * best - j.frobenius_sq();
}

std::vector<CheckReport> check_chain_sweep(const MlpClassifier& model, const Tensor& x,
                                           std::span<const double> schedule, std::size_t grid_resolution) {
  if (schedule.empty()) throw std::invalid_argument("chain sweep needs at least one c");
  std::vector<CheckReport> out;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    if (k > 0 && !(schedule[k] < schedule[k - 1])) throw std::invalid_argument("chain schedule must decrease");
    out.push_back(check_chain(model, x, schedule[k], grid_resolution));
  }
  const double limit = chain_limit_margin(model, x);
  CheckReport trend;
  trend.name = "chain_trend";
  trend.instance = InstanceHash().add(model).add(x.values()).add(schedule).str();
  trend.rhs = limit;
  trend.tolerance = 1e-9 * (1.0 + std::abs(limit));
  trend.pass = std::all_of(out.begin(), out.end(), [](const CheckReport& r) { return r.pass; });
  double prev = std::abs(out.front().margin - limit);
  trend.lhs = prev;
  trend.margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < out.size(); ++k) {
    const double dist = std::abs(out[k].margin - limit);
    trend.margin = std::min(trend.margin, prev - dist);
    if (dist > prev + trend.tolerance) trend.pass = false;
    prev = dist;
  }
  if (out.size() == 1) trend.margin = 0.0;
  std::vector<double> margins;
  for (const auto& r : out) margins.push_back(r.margin);
  trend.note = fmt::format("margins {:.6g}", fmt::join(margins, " "));
  out.push_back(std::move(trend));
  return out;
}

CheckReport check_kl_second_order(const MlpClassifier& model, const Tensor& x, double c, std::size_t n_samples,
                                  KlDirection direction, Rng& rng) {
  if (!(c >= 0.0)) throw std::invalid_argument("check_kl_second_order: c must be nonnegative");
  if (n_samples == 0) throw std::invalid_argument("check_kl_second_order: need samples");
  CheckReport r;
  r.name = direction == KlDirection::kForward ? "kl_second_order_forward" : "kl_second_order_reversed";
  r.instance = InstanceHash().add(model).add(x.values()).add(c).add(static_cast<double>(n_samples)).str();
  r.tolerance = std::max(0.05, 3.0 / std::sqrt(static_cast<double>(n_samples)) + 20.0 * c);
  if (c == 0.0) {
    r.margin = r.tolerance;
    r.pass = true;
    r.note = "zero noise";
    return r;
  }
  const JacobianMatrix j = input_output_jacobian(model, x);
  const Tensor clean = model.logits(x);
  const Tensor f = softmax(clean);
  const double predicted = 0.5 * c * c * weighted_trace(j, f);
  if (predicted < 1e-20) throw std::domain_error("degenerate instance");

  const NoiseSpec noise{c};
  double total = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const Tensor noisy = model.logits(perturb_input(x, noise, rng));
    total += direction == KlDirection::kForward ? kl_of_logits(noisy, clean) : kl_of_logits(clean, noisy);
  }
  r.lhs = total / static_cast<double>(n_samples);
  r.rhs = predicted;
  const double ratio = r.lhs / r.rhs;
  r.margin = r.tolerance - std::abs(ratio - 1.0);
  r.pass = r.margin >= 0.0;
  if (j.max_abs_column_sum() > 1e-10) {
    r.pass = false;
    r.note = "jacobian column sums not zero";
  } else if (c > 1e-2) {
    r.note = fmt::format("c={} above 1e-2; tolerance widened to {:.4g} by the 20c curvature term", c, r.tolerance);
  }
  return r;
}

CheckReport check_taylor(const MlpClassifier& model, const Tensor& x, std::span<const double> eps,
                         std::span<const double> c_schedule) {
  if (c_schedule.size() < 3) throw std::invalid_argument("taylor schedule needs at least three entries");
  for (std::size_t k = 1; k < c_schedule.size(); ++k) {
    if (!(c_schedule[k] < c_schedule[k - 1]) || !(c_schedule[k] > 0.0)) {
      throw std::invalid_argument("taylor schedule must be positive and strictly decreasing");
    }
  }
  if (eps.size() != model.input_dim()) throw std::invalid_argument("check_taylor: direction length");
  CheckReport r;
  r.name = "taylor";
  r.instance = InstanceHash().add(model).add(x.values()).add(eps).add(c_schedule).str();
  const JacobianMatrix j = input_output_jacobian(model, x);
  const Tensor f0 = model.forward(x);
  const Tensor je = matvec_span(j.values, eps);
  const double e2 = norm_sq(Tensor::vector(std::vector<double>(eps.begin(), eps.end()))).item();

  std::vector<double> rem;
  bool linear_ok = true;
  for (double c : c_schedule) {
    const Tensor f = model.forward(shifted(x, eps, c));
    std::vector<double> diff(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) diff[i] = f[i] - f0[i] - c * je[i];
    rem.push_back(l2_norm(diff));
    const double lin = c * c * norm_sq(je).item();
    linear_ok = linear_ok && holds(lin, c * c * e2 * j.frobenius_sq());
  }

  r.tolerance = 0.0;
  if (std::all_of(rem.begin(), rem.end(), [](double v) { return v == 0.0; })) {
    r.pass = linear_ok;
    r.note = "zero remainder";
    return r;
  }
  r.lhs = std::numeric_limits<double>::infinity();
  r.rhs = -std::numeric_limits<double>::infinity();
  r.margin = std::numeric_limits<double>::infinity();
  bool ratios_ok = true;
  std::vector<double> ratios;
  for (std::size_t k = 1; k < rem.size(); ++k) {
    const double rho = c_schedule[k] / c_schedule[k - 1];
    const double lo = 0.6 * rho * rho;
    const double hi = 1.8 * rho * rho;
    const double ratio = rem[k - 1] > 0.0 ? rem[k] / rem[k - 1] : std::numeric_limits<double>::infinity();
    ratios.push_back(ratio);
    r.lhs = std::min(r.lhs, ratio);
    r.rhs = std::max(r.rhs, ratio);
    r.margin = std::min(r.margin, std::min(ratio - lo, hi - ratio));
    ratios_ok = ratios_ok && ratio >= lo && ratio <= hi;
  }
  r.tolerance = 0.6;
  r.pass = ratios_ok && linear_ok;
  r.note = fmt::format("ratios {:.6g}", fmt::join(ratios, " "));
  if (!linear_ok) r.note += "; linear bound violated";
  if (j.max_abs_column_sum() > 1e-10) {
    r.pass = false;
    r.note += "; jacobian column sums not zero";
  }
  return r;
}

MlpClassifier random_model(std::size_t n, std::size_t hidden, std::size_t m, Rng& rng, double scale) {
  const std::vector<std::size_t> dims{n, hidden, m};
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    std::vector<double> w(dims[l] * dims[l + 1]);
    std::vector<double> b(dims[l + 1]);
    for (double& v : w) v = scale * rng.normal();
    for (double& v : b) v = scale * rng.normal();
    layers.push_back({Tensor::matrix(dims[l + 1], dims[l], std::move(w)), Tensor::vector(std::move(b))});
  }
  return MlpClassifier(dims, std::move(layers));
}

Tensor random_simplex(std::size_t m, Rng& rng) {
  std::vector<double> v(m);
  double total = 0.0;
  for (double& x : v) {
    x = -std::log(1.0 - rng.uniform());
    total += x;
  }
  for (double& x : v) x /= total;
  return Tensor::vector(std::move(v));
}

SuiteResult run_verification_suite(const SuiteOptions& options) {
  SuiteResult out;
  const double chain_cs[] = {1e-2, 5e-3, 2.5e-3};
  const double taylor_cs[] = {1e-3, 5e-4, 2.5e-4, 1.25e-4};
  auto add = [&](CheckReport r) {
    (r.pass ? out.passed : out.failed) += 1;
    out.reports.push_back(std::move(r));
  };

  for (std::size_t i = 0; i < options.instances; ++i) {
    Rng rng(options.seed, fmt::format("verify/{}", i));

    const std::size_t rows = 1 + rng.index(8);
    const std::size_t cols = 1 + rng.index(8);
    std::vector<double> entries(rows * cols);
    for (double& v : entries) v = rng.normal();
    const Tensor j = Tensor::matrix(rows, cols, std::move(entries));
    add(check_frobenius_vs_inf(j));
    add(check_induced_norm(j));
    std::vector<double> eps(cols);
    for (double& v : eps) v = rng.normal();
    add(check_linear_bound(j, eps, rng.uniform(1e-3, 1.0)));

    const std::size_t simplex = 2 + rng.index(5);
    const Tensor p = random_simplex(simplex, rng);
    add(check_pinsker(p, random_simplex(simplex, rng)));

    const std::size_t n = 1 + rng.index(3);
    const std::size_t hidden = 2 + rng.index(5);
    const std::size_t m = 2 + rng.index(3);
    const MlpClassifier model = random_model(n, hidden, m, rng);
    std::vector<double> xv(n);
    for (double& v : xv) v = rng.normal();
    const Tensor x = Tensor::vector(std::move(xv));

    add(check_column_sums(model, x));
    for (auto& r : check_chain_sweep(model, x, chain_cs, options.chain_grid)) add(std::move(r));
    add(check_taylor(model, x, random_unit(n, rng), taylor_cs));
    for (KlDirection d : {KlDirection::kForward, KlDirection::kReversed}) {
      try {
        add(check_kl_second_order(model, x, options.pdm_c, options.pdm_samples, d, rng));
      } catch (const std::domain_error&) {
        ++out.skipped;
      }
    }
  }
  return out;
}

std::string SuiteResult::text() const {
  std::string s;
  for (const auto& r : reports) {
    s += r.to_line();
    s += '\n';
  }
  s += fmt::format("summary total={} passed={} failed={} skipped={}\n", reports.size(), passed, failed, skipped);
  return s;
}

std::string SuiteResult::summary_json(const SuiteOptions& options) const {
  std::map<std::string, std::pair<std::size_t, std::size_t>> by_check;
  for (const auto& r : reports) (r.pass ? by_check[r.name].first : by_check[r.name].second) += 1;
  nlohmann::ordered_json j;
  j["seed"] = options.seed;
  j["instances"] = options.instances;
  j["total"] = reports.size();
  j["passed"] = passed;
  j["failed"] = failed;
  j["skipped"] = skipped;
  for (const auto& [name, counts] : by_check) {
    j["checks"][name] = {{"passed", counts.first}, {"failed", counts.second}};
  }
  return j.dump(2) + "\n";
}

}  // namespace robust
