#include "robust/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace robust {

namespace {

constexpr Method kAllMethods[] = {Method::kStd, Method::kJr,  Method::kVat,
                                  Method::kPdm, Method::kAdv, Method::kTat};

Tensor plus(const Tensor& x, std::span<const double> delta) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += delta[i];
  return Tensor(x.shape(), std::move(v));
}

struct ExampleGrad {
  std::vector<double> grad;
  double loss = 0.0;
  double reg = 0.0;
  std::size_t pred = 0;
};

Var divergence(Graph& g, const Var& clean, const Var& adv, Divergence d) {
  switch (d) {
    case Divergence::kKl: return kl_from_log(clean, adv);
    case Divergence::kSymmetricKl: return add(kl_from_log(clean, adv), kl_from_log(adv, clean));
    case Divergence::kKlDetachClean: return kl_from_log(g.detach(clean), adv);
  }
  throw std::logic_error("unhandled divergence");
}

ExampleGrad tat_example(const MlpClassifier& model, const Tensor& x, std::size_t y,
                        std::span<const double> delta, const TrainConfig& cfg) {
  Graph g;
  const BoundModel bound = model.bind(g);
  const Var clean = bound.log_posterior(g.input(x));
  const Var adv = bound.log_posterior(g.constant(plus(x, delta)));
  const Var ce = nll(clean, y);
  const Var div = divergence(g, clean, adv, cfg.tat.divergence);
  const Var obj = add(ce, scale(div, cfg.alpha));
  ExampleGrad out;
  out.grad = bound.flat_gradient(g.gradient(obj, bound.parameters()));
  out.loss = ce.value().item();
  out.reg = std::max(0.0, div.value().item());
  out.pred = argmax(clean.value());
  return out;
}

ExampleGrad objective_example(TrainState& state, const Example& ex, const TrainConfig& cfg) {
  const MlpClassifier& model = state.model;
  const PerturbationConfig& pc = cfg.perturbation;
  if (cfg.method == Method::kTat) {
    const std::size_t target = state.tally.sample_target(ex.y, state.streams.tally);
    const std::vector<double> delta = targeted_pgd(model, ex.x, target, pc, state.streams.adversary);
    return tat_example(model, ex.x, ex.y, delta, cfg);
  }

  Graph g;
  const BoundModel bound = model.bind(g);
  const Var x = g.input(ex.x);
  const Var clean = bound.log_posterior(x);
  const Var ce = nll(clean, ex.y);
  ExampleGrad out;
  out.loss = ce.value().item();
  out.pred = argmax(clean.value());

  Var obj = ce;
  bool second_order = false;
  switch (cfg.method) {
    case Method::kStd:
    case Method::kVat:
      break;
    case Method::kJr: {
      const Var r = jr_term(bound, x);
      out.reg = r.value().item();
      obj = add(ce, scale(r, cfg.alpha));
      second_order = true;
      break;
    }
    case Method::kPdm: {
      const Var r = pdm_term(bound, ex.x, pc, state.streams.noise);
      out.reg = std::max(0.0, r.value().item());
      obj = add(ce, scale(r, cfg.alpha));
      break;
    }
    case Method::kAdv: {
      const std::vector<double> delta = untargeted_pgd(model, ex.x, ex.y, pc, state.streams.adversary);
      const Var r = nll(bound.log_posterior(g.constant(plus(ex.x, delta))), ex.y);
      out.reg = r.value().item();
      obj = add(ce, scale(r, cfg.alpha));
      break;
    }
    case Method::kTat:
      break;
  }
  out.grad = bound.flat_gradient(second_order ? g.double_backward(obj)
                                              : g.gradient(obj, bound.parameters()));

  if (cfg.method == Method::kVat) {
    const RegularizerValue r = vat(model, ex.x, pc, state.streams.noise);
    out.reg = r.value;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += cfg.alpha * r.parameter_gradient[i];
  }
  return out;
}

BatchMetrics sgd_step(TrainState& state, std::span<const Example> batch, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("train step needs a nonempty batch");
  if (state.tally.num_classes() != state.model.num_classes()) {
    throw std::invalid_argument("tally and model disagree on the number of classes");
  }
  BatchMetrics metrics;
  std::vector<double> total(state.model.parameter_count(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& ex = batch[i];
    ExampleGrad eg;
    try {
      eg = objective_example(state, ex, cfg);
    } catch (const std::domain_error& e) {
      throw std::runtime_error(fmt::format("non-finite value at batch example {}: {}", i, e.what()));
    }
    for (std::size_t k = 0; k < total.size(); ++k) {
      if (!std::isfinite(eg.grad[k])) {
        throw std::runtime_error(fmt::format("non-finite gradient at batch example {}", i));
      }
      total[k] += eg.grad[k];
    }
    state.tally.record(ex.y, eg.pred);
    metrics.loss_sum += eg.loss;
    metrics.reg_sum += eg.reg;
    metrics.correct += eg.pred == ex.y ? 1 : 0;
    ++metrics.count;
  }
  std::vector<double> theta = state.model.flat_parameters();
  const double step = cfg.learning_rate / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= step * total[k];
  state.model.set_flat_parameters(theta);
  return metrics;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kStd: return "std";
    case Method::kJr: return "jr";
    case Method::kVat: return "vat";
    case Method::kPdm: return "pdm";
    case Method::kAdv: return "adv";
    case Method::kTat: return "tat";
  }
  return "unknown";
}

Method parse_method(std::string_view s) {
  for (Method m : kAllMethods) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument(fmt::format("unknown method '{}' (valid: std, jr, vat, pdm, adv, tat)", s));
}

std::string_view to_string(Divergence d) {
  switch (d) {
    case Divergence::kKl: return "kl";
    case Divergence::kSymmetricKl: return "symmetric_kl";
    case Divergence::kKlDetachClean: return "kl_detach_clean";
  }
  return "unknown";
}

Divergence parse_divergence(std::string_view s) {
  if (s == "kl") return Divergence::kKl;
  if (s == "symmetric_kl") return Divergence::kSymmetricKl;
  if (s == "kl_detach_clean") return Divergence::kKlDetachClean;
  throw std::invalid_argument(
      fmt::format("unknown divergence '{}' (valid: kl, symmetric_kl, kl_detach_clean)", s));
}

void TrainConfig::validate() const {
  auto fail = [](std::string_view msg) { throw std::invalid_argument(std::string(msg)); };
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail(fmt::format("alpha must be >= 0, got {}", alpha));
  if (epochs < 1) fail(fmt::format("epochs must be >= 1, got {}", epochs));
  if (batch_size < 1) fail(fmt::format("batch_size must be >= 1, got {}", batch_size));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(fmt::format("learning_rate must be > 0, got {}", learning_rate));
  }
  for (auto h : hidden) {
    if (h == 0) fail("hidden widths must be positive");
  }
  if (seeds.empty()) fail("seeds must be nonempty");
  for (double c : corruption_levels) {
    if (!(c >= 0.0) || !std::isfinite(c)) fail(fmt::format("corruption level must be >= 0, got {}", c));
  }
  if (eval_draws < 1) fail("eval_draws must be >= 1");
  if (methods.empty()) fail("methods must be nonempty");
  if (!(tat.tally_smoothing > 0.0)) fail("tat.tally_smoothing must be > 0");
  if (!(tat.tally_momentum >= 0.0 && tat.tally_momentum < 1.0)) fail("tat.tally_momentum must be in [0, 1)");
  perturbation.validate();
  dataset.validate();
}

std::vector<std::size_t> TrainConfig::layer_dims() const {
  std::vector<std::size_t> dims{dataset.n_features};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(dataset.n_classes);
  return dims;
}

TrainState::TrainState(MlpClassifier m, const TrainConfig& cfg, std::uint64_t seed)
    : model(std::move(m)),
      tally(ErrorTally::uniform(model.num_classes(), cfg.tat.tally_smoothing, cfg.tat.tally_momentum)),
      streams(seed),
      total_epochs(static_cast<std::size_t>(cfg.epochs)) {}

BatchMetrics tat_train_step(TrainState& state, std::span<const Example> batch, const TrainConfig& cfg) {
  TrainConfig tat_cfg = cfg;
  tat_cfg.method = Method::kTat;
  return sgd_step(state, batch, tat_cfg);
}

BatchMetrics train_step(TrainState& state, std::span<const Example> batch, const TrainConfig& cfg) {
  return sgd_step(state, batch, cfg);
}

RegularizerValue tat_objective(const MlpClassifier& model, const Tensor& x, std::size_t y,
                               std::span<const double> delta, const TrainConfig& cfg) {
  if (delta.size() != x.size()) throw std::invalid_argument("tat_objective: delta length");
  ExampleGrad eg = tat_example(model, x, y, delta, cfg);
  RegularizerValue out;
  out.value = eg.loss + cfg.alpha * eg.reg;
  out.parameter_gradient = std::move(eg.grad);
  out.direction.assign(delta.begin(), delta.end());
  return out;
}

MlpClassifier make_model(const TrainConfig& cfg, std::uint64_t seed) {
  RunStreams streams(seed);
  return MlpClassifier(cfg.layer_dims(), streams.init);
}

TrainResult train(MlpClassifier model, std::span<const Example> data, const TrainConfig& cfg,
                  std::uint64_t seed, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  TrainState state(std::move(model), cfg, seed);
  std::vector<std::size_t> order(data.size());
  std::vector<Example> batch;
  std::vector<EpochStats> history;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  for (std::size_t epoch = 0; epoch < state.total_epochs; ++epoch) {
    state.epoch = epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[state.streams.order.index(i)]);

    BatchMetrics sum;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(data[order[i]]);
      BatchMetrics b;
      try {
        b = train_step(state, batch, cfg);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(fmt::format("epoch {}, batch starting at {}: {}", epoch, start, e.what()));
      }
      sum.loss_sum += b.loss_sum;
      sum.reg_sum += b.reg_sum;
      sum.correct += b.correct;
      sum.count += b.count;
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = sum.loss_sum / static_cast<double>(sum.count);
    stats.reg_value = sum.reg_sum / static_cast<double>(sum.count);
    stats.train_accuracy = static_cast<double>(sum.correct) / static_cast<double>(sum.count);
    stats.tally_counts = state.tally.buffer();
    state.tally.commit();
    stats.tally_active = state.tally.active_weights();
    if (on_epoch) on_epoch(stats, state.model);
    history.push_back(std::move(stats));
  }
  state.epoch = state.total_epochs;
  return TrainResult{std::move(state.model), std::move(state.tally), std::move(history)};
}

}  // namespace robust
