#include "robust/graph.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace robust {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatVec: return "matmul";
    case OpKind::kMatTVec: return "matmul_t";
    case OpKind::kOuter: return "outer";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kNormSq: return "norm_sq";
    case OpKind::kPick: return "pick";
    case OpKind::kScatter: return "scatter";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kKl: return "kl";
    case OpKind::kCrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

namespace {

// Vector-Jacobian products written once against the op vocabulary shared by
// Tensor and Var. Instantiated with Tensor for plain reverse passes and with
// Var when the pass itself is recorded for a later differentiation.
template <class T, class Ctx>
void apply_vjp(const Graph::Node& n, const T& g, Ctx& c) {
  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kParameter:
    case OpKind::kConstant:
      return;
    case OpKind::kMatVec:
      if (c.needs(0)) c.acc(0, outer(g, c.in(1)));
      if (c.needs(1)) c.acc(1, mattvec(c.in(0), g));
      return;
    case OpKind::kMatTVec:
      if (c.needs(0)) c.acc(0, outer(c.in(1), g));
      if (c.needs(1)) c.acc(1, matvec(c.in(0), g));
      return;
    case OpKind::kOuter:
      if (c.needs(0)) c.acc(0, matvec(g, c.in(1)));
      if (c.needs(1)) c.acc(1, mattvec(g, c.in(0)));
      return;
    case OpKind::kAdd:
      if (c.needs(0)) c.acc(0, g);
      if (c.needs(1)) c.acc(1, g);
      return;
    case OpKind::kSub:
      if (c.needs(0)) c.acc(0, g);
      if (c.needs(1)) c.acc(1, scale(g, -1.0));
      return;
    case OpKind::kMul:
      if (c.needs(0)) c.acc(0, mul(g, c.in(1)));
      if (c.needs(1)) c.acc(1, mul(g, c.in(0)));
      return;
    case OpKind::kDiv:
      if (c.needs(0)) c.acc(0, div(g, c.in(1)));
      if (c.needs(1)) c.acc(1, scale(div(mul(g, c.out()), c.in(1)), -1.0));
      return;
    case OpKind::kScale:
      c.acc(0, scale(g, n.scalar));
      return;
    case OpKind::kAddScalar:
      c.acc(0, g);
      return;
    case OpKind::kTanh: {
      auto y = c.out();
      c.acc(0, mul(g, add_scalar(scale(mul(y, y), -1.0), 1.0)));
      return;
    }
    case OpKind::kExp:
      c.acc(0, mul(g, c.out()));
      return;
    case OpKind::kLog:
      c.acc(0, div(g, c.in(0)));
      return;
    case OpKind::kSoftmax: {
      auto y = c.out();
      c.acc(0, mul(y, sub(g, broadcast(sum(mul(g, y)), c.shape(0)))));
      return;
    }
    case OpKind::kLogSoftmax: {
      auto y = c.out();
      c.acc(0, sub(g, mul(exp(y), broadcast(sum(g), c.shape(0)))));
      return;
    }
    case OpKind::kSum:
      c.acc(0, broadcast(g, c.shape(0)));
      return;
    case OpKind::kNormSq:
      c.acc(0, scale(mul(broadcast(g, c.shape(0)), c.in(0)), 2.0));
      return;
    case OpKind::kPick:
      c.acc(0, scatter(g, n.index, c.shape(0)));
      return;
    case OpKind::kScatter:
      c.acc(0, pick(g, n.index));
      return;
    case OpKind::kBroadcast:
      c.acc(0, sum(g));
      return;
    case OpKind::kKl: {
      auto gb = broadcast(g, c.shape(0));
      auto p = exp(c.in(0));
      if (c.needs(0)) c.acc(0, mul(gb, mul(p, add_scalar(sub(c.in(0), c.in(1)), 1.0))));
      if (c.needs(1)) c.acc(1, scale(mul(gb, p), -1.0));
      return;
    }
    case OpKind::kCrossEntropy:
      c.acc(0, scatter(scale(div(g, pick(c.in(0), n.index)), -1.0), n.index, c.shape(0)));
      return;
  }
}

struct ValueContext {
  const Graph& graph;
  const Graph::Node& node;
  const std::vector<char>& reach;
  std::vector<std::optional<Tensor>>& adj;

  bool needs(std::size_t k) const { return reach[node.parents[k]] != 0; }
  const Tensor& in(std::size_t k) const { return graph.node(node.parents[k]).value; }
  const Tensor& out() const { return node.value; }
  const Shape& shape(std::size_t k) const { return in(k).shape(); }
  void acc(std::size_t k, Tensor grad) {
    auto& slot = adj[node.parents[k]];
    if (slot) {
      const auto dst = slot->mutable_values();
      const auto src = grad.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    } else {
      slot = std::move(grad);
    }
  }
};

struct RecordContext {
  Graph& graph;
  std::size_t id;
  const Graph::Node& node;
  const std::vector<char>& reach;
  std::vector<std::optional<std::size_t>>& adj;

  bool needs(std::size_t k) const { return reach[node.parents[k]] != 0; }
  Var in(std::size_t k) const { return Var(&graph, node.parents[k]); }
  Var out() const { return Var(&graph, id); }
  const Shape& shape(std::size_t k) const { return graph.node(node.parents[k]).value.shape(); }
  void acc(std::size_t k, const Var& grad) {
    auto& slot = adj[node.parents[k]];
    slot = slot ? add(Var(&graph, *slot), grad).id() : grad.id();
  }
};

}  // namespace

Tensor Gradients::operator()(const Var& v) const {
  if (v.id() < values_.size() && values_[v.id()]) return *values_[v.id()];
  return Tensor::zeros(v.shape());
}

Var Gradients::var(const Var& v) const {
  if (!recorded_) {
    throw std::logic_error("gradient was not recorded; run the backward pass with GradMode::kRecord");
  }
  if (v.id() < vars_.size() && vars_[v.id()]) return Var(graph_, *vars_[v.id()]);
  return graph_->constant(Tensor::zeros(v.shape()));
}

Var Graph::input(Tensor value) { return record(OpKind::kInput, {}, std::move(value)); }
Var Graph::parameter(Tensor value) { return record(OpKind::kParameter, {}, std::move(value)); }
Var Graph::constant(Tensor value) { return record(OpKind::kConstant, {}, std::move(value)); }

Var Graph::record(OpKind kind, std::initializer_list<Var> parents, Tensor value, double scalar,
                  std::size_t index) {
  Node n;
  n.kind = kind;
  n.arity = parents.size();
  std::size_t k = 0;
  for (const Var& p : parents) {
    if (&p.graph() != this) throw std::invalid_argument("operands belong to different graphs");
    n.parents[k++] = p.id();
  }
  n.value = std::move(value);
  n.scalar = scalar;
  n.index = index;
  n.from_backward = recording_backward_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(const Var& root, GradMode mode) { return run(root, {}, false, mode); }

Gradients Graph::gradient(const Var& root, std::span<const Var> wrt, GradMode mode) {
  return run(root, wrt, true, mode);
}

Gradients Graph::double_backward(const Var& root) {
  std::vector<char> seen(root.id() + 1, 0);
  std::vector<std::size_t> stack{root.id()};
  bool found = false;
  while (!stack.empty() && !found) {
    const std::size_t id = stack.back();
    stack.pop_back();
    if (seen[id]) continue;
    seen[id] = 1;
    const Node& n = nodes_[id];
    if (n.from_backward) found = true;
    for (std::size_t k = 0; k < n.arity; ++k) stack.push_back(n.parents[k]);
  }
  if (!found) {
    throw std::logic_error("double_backward: the first backward pass was not recorded");
  }
  return run(root, {}, false, GradMode::kValues);
}

Gradients Graph::run(const Var& root, std::span<const Var> wrt, bool restrict, GradMode mode) {
  if (&root.graph() != this) throw std::invalid_argument("backward: root belongs to another graph");
  if (root.value().size() != 1) {
    throw std::invalid_argument(
        fmt::format("backward: root must be scalar, got shape {}", to_string(root.shape())));
  }
  const std::size_t count = root.id() + 1;

  // reach[i]: node i depends on a differentiation target.
  std::vector<char> reach(count, 0);
  if (restrict) {
    for (const Var& v : wrt) {
      if (v.id() < count) reach[v.id()] = 1;
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    const Node& n = nodes_[i];
    if (!restrict && (n.kind == OpKind::kInput || n.kind == OpKind::kParameter)) reach[i] = 1;
    for (std::size_t k = 0; k < n.arity; ++k) reach[i] |= reach[n.parents[k]];
  }

  ++stats_.backward_passes;
  Gradients out;
  out.graph_ = this;
  out.recorded_ = mode == GradMode::kRecord;
  out.values_.resize(count);

  if (mode == GradMode::kValues) {
    std::vector<std::optional<Tensor>>& adj = out.values_;
    adj[root.id()] = Tensor::filled(root.shape(), 1.0);
    for (std::size_t id = count; id-- > 0;) {
      if (!reach[id] || !adj[id]) continue;
      const Node& n = nodes_[id];
      if (n.arity == 0) continue;
      ValueContext ctx{*this, n, reach, adj};
      apply_vjp(n, *adj[id], ctx);
    }
    return out;
  }

  recording_backward_ = true;
  try {
    std::vector<std::optional<std::size_t>>& adj = out.vars_;
    adj.resize(count);
    adj[root.id()] = constant(Tensor::filled(root.shape(), 1.0)).id();
    for (std::size_t id = count; id-- > 0;) {
      if (!reach[id] || !adj[id]) continue;
      const Node& n = nodes_[id];
      if (n.arity == 0) continue;
      RecordContext ctx{*this, id, n, reach, adj};
      const Var g(this, *adj[id]);
      apply_vjp(n, g, ctx);
    }
  } catch (...) {
    recording_backward_ = false;
    throw;
  }
  recording_backward_ = false;
  for (std::size_t id = 0; id < count; ++id) {
    if (out.vars_[id]) out.values_[id] = nodes_[*out.vars_[id]].value;
  }
  return out;
}

}  // namespace robust
