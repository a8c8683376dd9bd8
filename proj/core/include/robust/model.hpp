#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "robust/graph.hpp"
#include "robust/rng.hpp"
#include "robust/tensor.hpp"

namespace robust {

struct DenseLayer {
  Tensor weight;  ///< out × in
  Tensor bias;    ///< out

  bool operator==(const DenseLayer&) const = default;
};

/// Parameters of a classifier placed on a graph. Forward passes built through
/// a BoundModel are counted in the graph's PassStats.
class BoundModel {
 public:
  Var logits(const Var& x) const;
  Var log_posterior(const Var& x) const { return log_softmax(logits(x)); }
  Var posterior(const Var& x) const { return softmax(logits(x)); }

  /// W₀, b₀, W₁, b₁, … in layer order.
  std::span<const Var> parameters() const { return params_; }
  /// Gradient w.r.t. every parameter, flattened in parameter order.
  std::vector<double> flat_gradient(const Gradients& grads) const;
  Graph& graph() const { return *graph_; }

 private:
  friend class MlpClassifier;
  Graph* graph_ = nullptr;
  std::vector<Var> params_;
};

/// Feedforward classifier f: Rⁿ → Δᵐ with tanh hidden layers and a softmax
/// head. Evaluation never mutates the parameters, so a const model can be
/// shared across threads.
class MlpClassifier {
 public:
  /// Glorot-uniform weights, zero biases.
  MlpClassifier(std::vector<std::size_t> layer_dims, Rng& init);
  MlpClassifier(std::vector<std::size_t> layer_dims, std::vector<DenseLayer> layers);
  static MlpClassifier from_flat(std::vector<std::size_t> layer_dims,
                                 std::span<const double> params);

  const std::vector<std::size_t>& layer_dims() const { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t num_classes() const { return dims_.back(); }
  std::size_t parameter_count() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> params);

  Tensor logits(const Tensor& x) const;
  /// Posterior probability vector.
  Tensor forward(const Tensor& x) const { return softmax(logits(x)); }

  /// Binds the parameters as trainable graph parameters.
  BoundModel bind(Graph& graph) const;
  /// Binds the parameters as constants; use when only input derivatives matter.
  BoundModel bind_frozen(Graph& graph) const;

  bool operator==(const MlpClassifier& other) const = default;

 private:
  BoundModel bind_as(Graph& graph, bool trainable) const;

  std::vector<std::size_t> dims_;
  std::vector<DenseLayer> layers_;
};

struct NoiseSpec {
  double scale = 0.0;  ///< standard deviation c of the isotropic Gaussian
};

/// x + ε with ε ~ N(0, c²I). Returns x unchanged when c == 0.
Tensor perturb_input(const Tensor& x, const NoiseSpec& noise, Rng& rng);

/// m × n matrix of ∂f_i/∂x_j evaluated at `point`.
struct JacobianMatrix {
  Tensor values;
  Tensor point;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
  double at(std::size_t i, std::size_t j) const { return values.at(i, j); }
  double frobenius_sq() const;
  /// max_j |Σ_i J_ij|; zero up to rounding because the posterior sums to one.
  double max_abs_column_sum() const;
};

/// One reverse pass per posterior component.
JacobianMatrix input_output_jacobian(const MlpClassifier& model, const Tensor& x);

/// Rows ∂f_i/∂x as graph nodes. With GradMode::kRecord the rows can be
/// differentiated again, e.g. w.r.t. the parameters.
std::vector<Var> jacobian_rows(const BoundModel& bound, const Var& x, GradMode mode);

/// Maps the posterior node to a scalar loss node.
using LossFunctional = std::function<Var(const Var& posterior)>;

/// ∇ₓ loss(f(x)).
Tensor input_gradient(const MlpClassifier& model, const Tensor& x, const LossFunctional& loss);

// Checkpoint text format, version 1:
//
//   robust-mlp 1
//   layers <k> <d0> <d1> ... <dk-1>
//   params <count>
//   <one parameter per line, %.17g>
//
// Parameters are flattened as W₀ (row-major), b₀, W₁, b₁, ...
void save_checkpoint(const MlpClassifier& model, std::ostream& out);
void save_checkpoint(const MlpClassifier& model, const std::filesystem::path& path);
MlpClassifier load_checkpoint(std::istream& in);
MlpClassifier load_checkpoint(const std::filesystem::path& path);

}  // namespace robust
