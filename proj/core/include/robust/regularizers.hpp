#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "robust/graph.hpp"
#include "robust/model.hpp"
#include "robust/rng.hpp"

namespace robust {

enum class KlDirection {
  kForward,   ///< KL(f(x̂) ‖ f(x)), noisy against clean
  kReversed,  ///< KL(f(x) ‖ f(x̂))
};

std::string_view to_string(KlDirection d);
KlDirection parse_kl_direction(std::string_view s);

/// Perturbation hyperparameters shared by the smoothness regularizers and the
/// adversaries.
struct PerturbationConfig {
  double noise_scale = 0.1;   ///< c: VAT radius, PDM noise std-dev
  double linf_bound = 1e-5;   ///< radius of the ℓ∞ ball PGD projects onto
  double step_size = 1e-4;    ///< η
  int inner_steps = 1;        ///< K
  double init_sigma = 1e-5;   ///< σ of the Gaussian δ initialization
  double probe_xi = 1e-6;     ///< VAT finite-difference probe radius
  int pdm_samples = 1;
  KlDirection kl_direction = KlDirection::kForward;
  bool vat_detach_clean = true;

  /// Throws std::invalid_argument naming the first field out of range.
  void validate() const;
  bool operator==(const PerturbationConfig&) const = default;
};

struct RegularizerValue {
  double value = 0.0;
  std::vector<double> parameter_gradient;  ///< ∂R/∂Θ, flattened in parameter order

  // Diagnostics.
  std::vector<double> direction;   ///< VAT: adversarial unit direction
  std::vector<double> sample_kls;  ///< PDM: per-sample divergences
  bool fallback_direction = false;  ///< VAT: degenerate probe gradient
  PassStats passes;
};

/// R = ‖J‖²_F, differentiated w.r.t. Θ through a recorded Jacobian.
RegularizerValue jr(const MlpClassifier& model, const Tensor& x);

/// R = (c²/2)·Σ_i (1/f_i)·Σ_j J_ij², the confidence-weighted Jacobian norm.
RegularizerValue weighted_jr(const MlpClassifier& model, const Tensor& x, double c);

/// One-step virtual adversarial estimate of max_{‖ε‖₂=1} KL(f(x) ‖ f(x + cε)).
/// Costs exactly three forward and two backward passes.
RegularizerValue vat(const MlpClassifier& model, const Tensor& x, const PerturbationConfig& cfg,
                     Rng& rng);

/// VAT's outer objective KL(f(x) ‖ f(x + c·d)) for a fixed direction d,
/// with the clean side detached or not per cfg. Value and Θ-gradient.
RegularizerValue vat_objective(const MlpClassifier& model, const Tensor& x,
                               std::span<const double> direction, const PerturbationConfig& cfg);

/// Mean over cfg.pdm_samples draws ε ~ N(0, c²I) of the clean/noisy KL in
/// cfg.kl_direction. Exactly zero, with zero gradient, when c == 0.
RegularizerValue pdm(const MlpClassifier& model, const Tensor& x, const PerturbationConfig& cfg,
                     Rng& rng);

// Graph-level builders, for objectives that combine terms before a single
// backward pass. `bound` must live on the graph that owns `x`.
Var jr_term(const BoundModel& bound, const Var& x);
Var weighted_jr_term(const BoundModel& bound, const Var& x, double c);
Var pdm_term(const BoundModel& bound, const Tensor& x, const PerturbationConfig& cfg, Rng& rng,
             std::vector<double>* sample_kls = nullptr);

/// Coordinatewise clamp onto [−eps, eps].
std::vector<double> linf_project(std::span<const double> delta, double eps);

/// δ₀ ~ N(0, σ²I); K steps δ ← Π(δ + η∇_δ CE(f(x+δ), y)).
std::vector<double> untargeted_pgd(const MlpClassifier& model, const Tensor& x, std::size_t y,
                                   const PerturbationConfig& cfg, Rng& rng);

/// δ₀ ~ N(0, σ²I); K steps δ ← Π(δ − η∇_δ CE(f(x+δ), y_t)).
std::vector<double> targeted_pgd(const MlpClassifier& model, const Tensor& x, std::size_t target,
                                 const PerturbationConfig& cfg, Rng& rng);

}  // namespace robust
