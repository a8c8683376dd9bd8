#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "robust/model.hpp"
#include "robust/rng.hpp"
#include "robust/tensor.hpp"
#include "robust/trainer.hpp"

namespace robust::support {

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, floor).
inline double rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Central differences of f at theta, step h.
inline std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                            std::vector<double> theta, double h = 1e-5) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = f(theta);
    theta[i] = saved - h;
    const double down = f(theta);
    theta[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// FD gradient of a scalar function of the model parameters.
inline std::vector<double> numeric_parameter_gradient(const MlpClassifier& model,
                                                      const std::function<double(const MlpClassifier&)>& f,
                                                      double h = 1e-5) {
  const auto dims = model.layer_dims();
  return numeric_gradient(
      [&](std::span<const double> theta) { return f(MlpClassifier::from_flat(dims, theta)); },
      model.flat_parameters(), h);
}

/// Random tanh MLP with 0–2 hidden layers; weights ~ N(0, scale²).
inline MlpClassifier random_mlp(Rng& rng, std::size_t max_in = 4, std::size_t max_classes = 4, double scale = 0.8) {
  std::vector<std::size_t> dims{1 + rng.index(max_in)};
  const std::size_t depth = rng.index(3);
  for (std::size_t l = 0; l < depth; ++l) dims.push_back(2 + rng.index(4));
  dims.push_back(2 + rng.index(max_classes - 1));
  std::vector<double> flat;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    for (std::size_t k = 0; k < dims[l] * dims[l + 1] + dims[l + 1]; ++k) flat.push_back(scale * rng.normal());
  }
  return MlpClassifier::from_flat(dims, flat);
}

inline Tensor random_point(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return Tensor::vector(std::move(v));
}

/// softmax(Wx + b) with one layer.
inline MlpClassifier linear_model(std::size_t m, std::size_t n, std::vector<double> w, std::vector<double> b) {
  return MlpClassifier({n, m}, {DenseLayer{Tensor::matrix(m, n, std::move(w)), Tensor::vector(std::move(b))}});
}

inline MlpClassifier identity_model(std::size_t m) {
  std::vector<double> w(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) w[i * m + i] = 1.0;
  return linear_model(m, m, std::move(w), std::vector<double>(m, 0.0));
}

/// Algorithm 1 for one example on a one-layer softmax model, K = 1, σ = 0,
/// divergence KL(f(x) ‖ f(x+δ)) with gradients through both sides, written
/// out with eager kernels.
inline std::vector<double> hand_traced_tat_step(const MlpClassifier& model, const Tensor& x, std::size_t y,
                                                std::size_t target, const TrainConfig& cfg) {
  const Tensor& w = model.layers().front().weight;
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const Tensor p = model.forward(x);

  // δ = Π(−η·Wᵀ(p − e_t))
  std::vector<double> delta(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double g = 0.0;
    for (std::size_t i = 0; i < m; ++i) g += w.at(i, j) * (p[i] - (i == target ? 1.0 : 0.0));
    delta[j] = std::clamp(-cfg.perturbation.step_size * g, -cfg.perturbation.linf_bound,
                          cfg.perturbation.linf_bound);
  }
  std::vector<double> xa(n);
  for (std::size_t j = 0; j < n; ++j) xa[j] = x[j] + delta[j];
  const Tensor q = model.forward(Tensor::vector(xa));

  double kl = 0.0;
  for (std::size_t i = 0; i < m; ++i) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  // Logit adjoints: clean side gets CE plus the KL's dependence on p, the
  // adversarial side gets q − p.
  std::vector<double> a(m), b(m);
  for (std::size_t i = 0; i < m; ++i) {
    a[i] = p[i] - (i == y ? 1.0 : 0.0) + cfg.alpha * p[i] * (std::log(p[i]) - std::log(q[i]) - kl);
    b[i] = cfg.alpha * (q[i] - p[i]);
  }
  std::vector<double> theta = model.flat_parameters();
  const double tau = cfg.learning_rate;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) theta[i * n + j] -= tau * (a[i] * x[j] + b[i] * xa[j]);
    theta[m * n + i] -= tau * (a[i] + b[i]);
  }
  return theta;
}

}  // namespace robust::support
