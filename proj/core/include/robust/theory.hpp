#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "robust/model.hpp"
#include "robust/regularizers.hpp"
#include "robust/rng.hpp"
#include "robust/tensor.hpp"

namespace robust {

struct CheckReport {
  std::string name;
  std::string instance;  ///< hash of the model or matrix plus the scalar settings
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;  ///< positive when the claim holds with room to spare
  double tolerance = 0.0;
  bool pass = false;
  std::string note;

  /// `check=<name> instance=<id> lhs=… rhs=… margin=… tol=… pass=0|1 [note="…"]`
  std::string to_line() const;
};

/// max_i Σ_j |J_ij|.
double induced_inf_norm(const Tensor& j);
/// max over the 2ⁿ sign vectors s of ‖Js‖_∞. Requires n ≤ 20.
double induced_inf_norm_brute_force(const Tensor& j);

/// ‖J‖²_F ≤ m·‖J‖²_∞.
CheckReport check_frobenius_vs_inf(const Tensor& j);

/// ‖P − Q‖₁² ≤ 2·KL(P‖Q), and ‖P − Q‖_∞ ≤ ‖P − Q‖₁.
CheckReport check_pinsker(const Tensor& p, const Tensor& q);

/// ‖cJε‖₂² ≤ c²‖ε‖₂²‖J‖²_F.
CheckReport check_linear_bound(const Tensor& j, std::span<const double> eps, double c);

/// closed-form induced ∞-norm against sign-vector brute force.
CheckReport check_induced_norm(const Tensor& j);

/// c²‖J‖²_F ≤ 2m·sup_{‖ε‖_∞=1} KL(f(x) ‖ f(x + cε))·(1 + 10c), the sup taken
/// over a grid of `grid_resolution` points on every face of the ℓ∞ sphere plus
/// all corners. The margin is reported normalized by c². Throws
/// std::invalid_argument for n > 3.
CheckReport check_chain(const MlpClassifier& model, const Tensor& x, double c,
                        std::size_t grid_resolution);

/// Limit of the normalized chain margin as c → 0:
/// m·max_corner εᵀJᵀdiag(1/f)Jε − ‖J‖²_F.
double chain_limit_margin(const MlpClassifier& model, const Tensor& x);

/// Chain checks at every c in `schedule` (strictly decreasing) plus a trend
/// report: the distance of the normalized margin from its c → 0 limit must
/// not grow as c shrinks.
std::vector<CheckReport> check_chain_sweep(const MlpClassifier& model, const Tensor& x,
                                           std::span<const double> schedule,
                                           std::size_t grid_resolution);

/// Monte-Carlo E_ε[KL] over ε ~ N(0, c²I) against (c²/2)·tr(Jᵀdiag(1/f)J).
/// Passes when the ratio is within max(0.05, 3/√n + 20c) of one. Throws
/// std::domain_error("degenerate instance") when the prediction is below 1e−20
/// for c > 0.
CheckReport check_kl_second_order(const MlpClassifier& model, const Tensor& x, double c,
                                  std::size_t n_samples, KlDirection direction, Rng& rng);

/// (i) remainder ratios r(c_{k+1})/r(c_k) of the first-order expansion lie in
/// [0.6ρ², 1.8ρ²] with ρ = c_{k+1}/c_k (so [0.15, 0.45] when halving);
/// (ii) ‖c_kJε‖² ≤ c_k²‖ε‖²‖J‖²_F at every step.
CheckReport check_taylor(const MlpClassifier& model, const Tensor& x, std::span<const double> eps,
                         std::span<const double> c_schedule);

/// |Σ_i J_ij| ≤ 1e−10 for every column.
CheckReport check_column_sums(const MlpClassifier& model, const Tensor& x);

struct SuiteOptions {
  std::uint64_t seed = 1;
  std::size_t instances = 100;
  double pdm_c = 1e-3;
  std::size_t pdm_samples = 20000;
  std::size_t chain_grid = 400;
};

struct SuiteResult {
  std::vector<CheckReport> reports;
  std::size_t passed = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;

  bool ok() const { return failed == 0; }
  /// One line per report, then a `summary …` line.
  std::string text() const;
  /// Machine-readable summary with per-check counts.
  std::string summary_json(const SuiteOptions& options) const;
};

/// Every check over randomized instances. Deterministic in the options.
SuiteResult run_verification_suite(const SuiteOptions& options);

/// Random tanh classifier with n inputs, m classes and one hidden layer, for
/// property checks. Weights ~ N(0, scale²).
MlpClassifier random_model(std::size_t n, std::size_t hidden, std::size_t m, Rng& rng, double scale = 1.0);

/// Point uniform on the simplex of dimension m (flat Dirichlet).
Tensor random_simplex(std::size_t m, Rng& rng);

}  // namespace robust
