#include "robust/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace robust {

std::string_view to_string(KlDirection d) {
  return d == KlDirection::kForward ? "forward" : "reversed";
}

KlDirection parse_kl_direction(std::string_view s) {
  if (s == "forward") return KlDirection::kForward;
  if (s == "reversed") return KlDirection::kReversed;
  throw std::invalid_argument(fmt::format("unknown kl_direction '{}' (forward|reversed)", s));
}

void PerturbationConfig::validate() const {
  auto fail = [](const char* field, double v) {
    throw std::invalid_argument(fmt::format("perturbation.{} out of range: {}", field, v));
  };
  if (!(noise_scale >= 0.0)) fail("noise_scale", noise_scale);
  if (!(linf_bound > 0.0)) fail("linf_bound", linf_bound);
  if (!(step_size >= 0.0)) fail("step_size", step_size);
  if (inner_steps < 1) fail("inner_steps", inner_steps);
  if (!(init_sigma >= 0.0)) fail("init_sigma", init_sigma);
  if (!(probe_xi > 0.0)) fail("probe_xi", probe_xi);
  if (pdm_samples < 1) fail("pdm_samples", pdm_samples);
}

namespace {

Var sum_all(const std::vector<Var>& terms) {
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

RegularizerValue finish(const BoundModel& bound, const Var& r, const Gradients& grads) {
  RegularizerValue out;
  out.value = std::max(0.0, r.value().item());
  out.parameter_gradient = bound.flat_gradient(grads);
  out.passes = bound.graph().stats();
  return out;
}

Tensor shifted(const Tensor& x, std::span<const double> direction, double c) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * direction[i];
  return Tensor(x.shape(), std::move(out));
}

std::vector<double> random_unit(std::size_t n, Rng& rng) {
  std::vector<double> d(n);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& v : d) v = rng.normal();
    norm = l2_norm(d);
  }
  for (double& v : d) v /= norm;
  return d;
}

std::vector<double> pgd(const MlpClassifier& model, const Tensor& x, std::size_t label,
                        const PerturbationConfig& cfg, Rng& rng, double sign) {
  cfg.validate();
  if (label >= model.num_classes()) throw std::out_of_range("pgd: class index out of range");
  std::vector<double> delta(x.size());
  for (double& v : delta) v = cfg.init_sigma * rng.normal();
  const LossFunctional loss = [label](const Var& p) { return cross_entropy(p, label); };
  for (int k = 0; k < cfg.inner_steps; ++k) {
    const Tensor g = input_gradient(model, shifted(x, delta, 1.0), loss);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += sign * cfg.step_size * g[i];
    delta = linf_project(delta, cfg.linf_bound);
  }
  return delta;
}

}  // namespace

Var jr_term(const BoundModel& bound, const Var& x) {
  std::vector<Var> terms;
  for (const Var& row : jacobian_rows(bound, x, GradMode::kRecord)) terms.push_back(norm_sq(row));
  return sum_all(terms);
}

Var weighted_jr_term(const BoundModel& bound, const Var& x, double c) {
  const Var p = bound.posterior(x);
  Graph& g = bound.graph();
  const Var wrt[] = {x};
  std::vector<Var> terms;
  for (std::size_t i = 0; i < p.value().size(); ++i) {
    const Var row = g.gradient(pick(p, i), wrt, GradMode::kRecord).var(x);
    terms.push_back(div(norm_sq(row), pick(p, i)));
  }
  return scale(sum_all(terms), 0.5 * c * c);
}

Var pdm_term(const BoundModel& bound, const Tensor& x, const PerturbationConfig& cfg, Rng& rng,
             std::vector<double>* sample_kls) {
  Graph& g = bound.graph();
  if (cfg.noise_scale == 0.0) {
    if (sample_kls) sample_kls->assign(static_cast<std::size_t>(cfg.pdm_samples), 0.0);
    return g.constant(Tensor::scalar(0.0));
  }
  const Var clean = bound.log_posterior(g.input(x));
  const NoiseSpec noise{cfg.noise_scale};
  std::vector<Var> terms;
  for (int s = 0; s < cfg.pdm_samples; ++s) {
    const Var noisy = bound.log_posterior(g.input(perturb_input(x, noise, rng)));
    terms.push_back(cfg.kl_direction == KlDirection::kForward ? kl_from_log(noisy, clean)
                                                              : kl_from_log(clean, noisy));
    if (sample_kls) sample_kls->push_back(terms.back().value().item());
  }
  return scale(sum_all(terms), 1.0 / cfg.pdm_samples);
}

RegularizerValue jr(const MlpClassifier& model, const Tensor& x) {
  Graph g;
  const BoundModel bound = model.bind(g);
  const Var r = jr_term(bound, g.input(x));
  return finish(bound, r, g.double_backward(r));
}

RegularizerValue weighted_jr(const MlpClassifier& model, const Tensor& x, double c) {
  if (c < 0.0) throw std::invalid_argument("weighted_jr: c must be nonnegative");
  Graph g;
  const BoundModel bound = model.bind(g);
  const Var r = weighted_jr_term(bound, g.input(x), c);
  return finish(bound, r, g.double_backward(r));
}

RegularizerValue pdm(const MlpClassifier& model, const Tensor& x, const PerturbationConfig& cfg,
                     Rng& rng) {
  cfg.validate();
  Graph g;
  const BoundModel bound = model.bind(g);
  std::vector<double> kls;
  const Var r = pdm_term(bound, x, cfg, rng, &kls);
  RegularizerValue out = finish(bound, r, g.gradient(r, bound.parameters()));
  out.sample_kls = std::move(kls);
  return out;
}

RegularizerValue vat(const MlpClassifier& model, const Tensor& x, const PerturbationConfig& cfg,
                     Rng& rng) {
  cfg.validate();
  Graph g;
  const BoundModel bound = model.bind(g);
  const Var x_const = g.constant(x);

  const Var clean = bound.log_posterior(g.input(x));
  const Var clean_detached = g.detach(clean);

  // One power-iteration step: the gradient of the divergence at a tiny probe
  // radius points along the most sensitive input direction.
  std::vector<double> d = random_unit(x.size(), rng);
  const Var probe_dir = g.input(Tensor(x.shape(), d));
  const Var probe = bound.log_posterior(add(x_const, scale(probe_dir, cfg.probe_xi)));
  const Var probe_wrt[] = {probe_dir};
  const Tensor grad = g.gradient(kl_from_log(clean_detached, probe), probe_wrt)(probe_dir);

  RegularizerValue out;
  const double norm = l2_norm(grad.values());
  if (norm < 1e-30) {
    out.fallback_direction = true;
  } else {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = grad[i] / norm;
  }

  const Var adv = bound.log_posterior(g.constant(shifted(x, d, cfg.noise_scale)));
  const Var r = kl_from_log(cfg.vat_detach_clean ? clean_detached : clean, adv);
  const Gradients grads = g.gradient(r, bound.parameters());

  out.value = std::max(0.0, r.value().item());
  out.parameter_gradient = bound.flat_gradient(grads);
  out.direction = std::move(d);
  out.passes = g.stats();
  return out;
}

RegularizerValue vat_objective(const MlpClassifier& model, const Tensor& x,
                               std::span<const double> direction, const PerturbationConfig& cfg) {
  if (direction.size() != x.size()) throw std::invalid_argument("vat_objective: direction length");
  Graph g;
  const BoundModel bound = model.bind(g);
  Var clean = bound.log_posterior(g.input(x));
  if (cfg.vat_detach_clean) clean = g.detach(clean);
  const Var adv = bound.log_posterior(g.constant(shifted(x, direction, cfg.noise_scale)));
  const Var r = kl_from_log(clean, adv);
  RegularizerValue out = finish(bound, r, g.gradient(r, bound.parameters()));
  out.direction.assign(direction.begin(), direction.end());
  return out;
}

std::vector<double> linf_project(std::span<const double> delta, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("linf_project: eps must be positive");
  std::vector<double> out(delta.begin(), delta.end());
  for (double& v : out) v = std::clamp(v, -eps, eps);
  return out;
}

std::vector<double> untargeted_pgd(const MlpClassifier& model, const Tensor& x, std::size_t y,
                                   const PerturbationConfig& cfg, Rng& rng) {
  return pgd(model, x, y, cfg, rng, +1.0);
}

std::vector<double> targeted_pgd(const MlpClassifier& model, const Tensor& x, std::size_t target,
                                 const PerturbationConfig& cfg, Rng& rng) {
  return pgd(model, x, target, cfg, rng, -1.0);
}

}  // namespace robust
