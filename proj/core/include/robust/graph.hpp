#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "robust/tensor.hpp"

namespace robust {

enum class OpKind {
  kInput,
  kParameter,
  kConstant,
  kMatVec,
  kMatTVec,
  kOuter,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kTanh,
  kExp,
  kLog,
  kSoftmax,
  kLogSoftmax,
  kSum,
  kNormSq,
  kPick,
  kScatter,
  kBroadcast,
  kKl,
  kCrossEntropy,
};

const char* op_name(OpKind kind);

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

enum class GradMode {
  kValues,  ///< adjoints are plain tensors
  kRecord,  ///< adjoints are graph nodes, so they can be differentiated again
};

/// Result of a reverse pass. Unreachable nodes read as zeros.
class Gradients {
 public:
  Tensor operator()(const Var& v) const;
  /// Recorded adjoint of `v`; throws std::logic_error unless the pass ran with
  /// GradMode::kRecord.
  Var var(const Var& v) const;
  bool recorded() const { return recorded_; }

 private:
  friend class Graph;
  Graph* graph_ = nullptr;
  bool recorded_ = false;
  std::vector<std::optional<Tensor>> values_;
  std::vector<std::optional<std::size_t>> vars_;
};

struct PassStats {
  std::size_t forward_passes = 0;
  std::size_t backward_passes = 0;
};

/// Append-only computation record. Node ids are a topological order.
///
/// A graph is confined to one thread. Different graphs share nothing.
class Graph {
 public:
  struct Node {
    OpKind kind = OpKind::kConstant;
    std::array<std::size_t, 2> parents{};
    std::size_t arity = 0;
    Tensor value;
    double scalar = 0.0;
    std::size_t index = 0;
    bool from_backward = false;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value);
  Var parameter(Tensor value);
  Var constant(Tensor value);
  Var detach(const Var& v) { return constant(v.value()); }

  /// Adjoints of `root` with respect to every input and parameter node.
  Gradients backward(const Var& root, GradMode mode = GradMode::kValues);

  /// Adjoints restricted to the paths that reach `wrt`.
  Gradients gradient(const Var& root, std::span<const Var> wrt, GradMode mode = GradMode::kValues);

  /// Backward pass over a scalar built from recorded first-order adjoints.
  /// Throws std::logic_error if `root` does not depend on any node produced by
  /// a GradMode::kRecord pass.
  Gradients double_backward(const Var& root);

  Var record(OpKind kind, std::initializer_list<Var> parents, Tensor value, double scalar = 0.0,
             std::size_t index = 0);

  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  void note_forward() { ++stats_.forward_passes; }
  const PassStats& stats() const { return stats_; }

 private:
  Gradients run(const Var& root, std::span<const Var> wrt, bool restrict, GradMode mode);

  // deque keeps node references stable while backward appends nodes.
  std::deque<Node> nodes_;
  PassStats stats_;
  bool recording_backward_ = false;
};

inline const Tensor& Var::value() const { return graph_->node(id_).value; }

// Differentiable ops. Each records one node on the graph of its first operand.
Var matvec(const Var& w, const Var& x);
Var mattvec(const Var& w, const Var& v);
Var outer(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var softmax(const Var& z);
Var log_softmax(const Var& z);
Var sum(const Var& a);
Var norm_sq(const Var& a);
Var pick(const Var& a, std::size_t index);
Var scatter(const Var& s, std::size_t index, const Shape& shape);
Var broadcast(const Var& s, const Shape& shape);

/// KL(P‖Q) from log-probabilities: Σ exp(logp)·(logp − logq).
Var kl_from_log(const Var& logp, const Var& logq);

/// Negative log-likelihood −logp[y] from log-probabilities.
Var nll(const Var& logp, std::size_t y);

/// Cross-entropy −ln p[y] on a probability vector.
Var cross_entropy(const Var& p, std::size_t y);

}  // namespace robust
