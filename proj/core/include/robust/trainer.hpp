#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "robust/data.hpp"
#include "robust/model.hpp"
#include "robust/regularizers.hpp"
#include "robust/rng.hpp"
#include "robust/tally.hpp"

namespace robust {

enum class Method { kStd, kJr, kVat, kPdm, kAdv, kTat };

std::string_view to_string(Method m);
/// Throws std::invalid_argument listing the valid names.
Method parse_method(std::string_view s);

/// Divergence between clean and adversarial posteriors in the TAT objective.
enum class Divergence {
  kKl,             ///< KL(f(x) ‖ f(x+δ)), gradients through both sides
  kSymmetricKl,    ///< KL(f(x) ‖ f(x+δ)) + KL(f(x+δ) ‖ f(x))
  kKlDetachClean,  ///< KL(sg[f(x)] ‖ f(x+δ))
};

std::string_view to_string(Divergence d);
Divergence parse_divergence(std::string_view s);

struct TatOptions {
  Divergence divergence = Divergence::kKl;
  double tally_smoothing = 1.0;
  double tally_momentum = 0.0;

  bool operator==(const TatOptions&) const = default;
};

/// Everything a run or a sweep needs. `method`, `alpha` and the perturbation
/// block describe a single run; `methods` plus `method_overrides` describe a
/// sweep, where each override maps a key (e.g. "alpha", "linf_bound") to a
/// JSON value text applied on top of the base settings.
struct TrainConfig {
  std::string name = "experiment";
  Method method = Method::kStd;
  double alpha = 1.0;
  PerturbationConfig perturbation;
  TatOptions tat;
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 0.1;  ///< τ
  std::vector<std::size_t> hidden{16};
  std::vector<std::uint64_t> seeds{1};
  std::vector<double> corruption_levels{0.1};
  std::size_t eval_draws = 10;
  DatasetSpec dataset;
  std::vector<Method> methods{Method::kStd};
  std::map<std::string, std::map<std::string, std::string>> method_overrides;
  bool record_wall_ms = false;
  std::string output_dir = "out";

  void validate() const;
  std::vector<std::size_t> layer_dims() const;
  bool operator==(const TrainConfig&) const = default;
};

struct BatchMetrics {
  double loss_sum = 0.0;  ///< Σ cross-entropy on clean inputs
  double reg_sum = 0.0;   ///< Σ regularizer values
  std::size_t correct = 0;
  std::size_t count = 0;
};

struct TrainState {
  TrainState(MlpClassifier model, const TrainConfig& cfg, std::uint64_t seed);

  MlpClassifier model;
  ErrorTally tally;
  RunStreams streams;
  std::size_t epoch = 0;
  std::size_t total_epochs = 0;
};

/// One minibatch of Targeted Adversarial Training: per example sample y_t from
/// the tally, run targeted PGD from δ ~ N(0, σ²I), accumulate
/// ∇Θ[CE(f(x), y) + α·D(f(x), f(x+δ))], then θ ← θ − τ·mean gradient.
/// Clean-input argmax predictions are fed to the tally.
BatchMetrics tat_train_step(TrainState& state, std::span<const Example> batch, const TrainConfig& cfg);

/// One minibatch for cfg.method.
BatchMetrics train_step(TrainState& state, std::span<const Example> batch, const TrainConfig& cfg);

/// TAT objective CE(f(x), y) + α·D(f(x), f(x+δ)) for fixed δ; value and
/// Θ-gradient.
RegularizerValue tat_objective(const MlpClassifier& model, const Tensor& x, std::size_t y,
                               std::span<const double> delta, const TrainConfig& cfg);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double reg_value = 0.0;
  double train_accuracy = 0.0;
  std::vector<std::uint64_t> tally_counts;  ///< epoch buffer before commit, m×m
  std::vector<double> tally_active;         ///< active weights after commit, m×m
};

struct TrainResult {
  MlpClassifier model;
  ErrorTally tally;
  std::vector<EpochStats> epochs;
};

using EpochCallback = std::function<void(const EpochStats&, const MlpClassifier&)>;

/// cfg.epochs epochs of shuffled minibatch SGD. Deterministic in (cfg, seed).
TrainResult train(MlpClassifier model, std::span<const Example> data, const TrainConfig& cfg,
                  std::uint64_t seed, const EpochCallback& on_epoch = {});

/// Model with cfg's hidden widths, initialized from the run's init stream.
MlpClassifier make_model(const TrainConfig& cfg, std::uint64_t seed);

}  // namespace robust
