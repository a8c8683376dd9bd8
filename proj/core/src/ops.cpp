#include <cmath>
#include <stdexcept>

#include "robust/graph.hpp"

namespace robust {

Var matvec(const Var& w, const Var& x) {
  return w.graph().record(OpKind::kMatVec, {w, x}, matvec(w.value(), x.value()));
}

Var mattvec(const Var& w, const Var& v) {
  return w.graph().record(OpKind::kMatTVec, {w, v}, mattvec(w.value(), v.value()));
}

Var outer(const Var& a, const Var& b) {
  return a.graph().record(OpKind::kOuter, {a, b}, outer(a.value(), b.value()));
}

Var add(const Var& a, const Var& b) {
  return a.graph().record(OpKind::kAdd, {a, b}, add(a.value(), b.value()));
}

Var sub(const Var& a, const Var& b) {
  return a.graph().record(OpKind::kSub, {a, b}, sub(a.value(), b.value()));
}

Var mul(const Var& a, const Var& b) {
  return a.graph().record(OpKind::kMul, {a, b}, mul(a.value(), b.value()));
}

Var div(const Var& a, const Var& b) {
  return a.graph().record(OpKind::kDiv, {a, b}, div(a.value(), b.value()));
}

Var scale(const Var& a, double s) {
  return a.graph().record(OpKind::kScale, {a}, scale(a.value(), s), s);
}

Var add_scalar(const Var& a, double s) {
  return a.graph().record(OpKind::kAddScalar, {a}, add_scalar(a.value(), s), s);
}

Var tanh(const Var& a) { return a.graph().record(OpKind::kTanh, {a}, tanh(a.value())); }
Var exp(const Var& a) { return a.graph().record(OpKind::kExp, {a}, exp(a.value())); }
Var log(const Var& a) { return a.graph().record(OpKind::kLog, {a}, log(a.value())); }

Var softmax(const Var& z) { return z.graph().record(OpKind::kSoftmax, {z}, softmax(z.value())); }

Var log_softmax(const Var& z) {
  return z.graph().record(OpKind::kLogSoftmax, {z}, log_softmax(z.value()));
}

Var sum(const Var& a) { return a.graph().record(OpKind::kSum, {a}, sum(a.value())); }

Var norm_sq(const Var& a) { return a.graph().record(OpKind::kNormSq, {a}, norm_sq(a.value())); }

Var pick(const Var& a, std::size_t index) {
  return a.graph().record(OpKind::kPick, {a}, pick(a.value(), index), 0.0, index);
}

Var scatter(const Var& s, std::size_t index, const Shape& shape) {
  return s.graph().record(OpKind::kScatter, {s}, scatter(s.value(), index, shape), 0.0, index);
}

Var broadcast(const Var& s, const Shape& shape) {
  return s.graph().record(OpKind::kBroadcast, {s}, broadcast(s.value(), shape));
}

Var kl_from_log(const Var& logp, const Var& logq) {
  const Tensor& lp = logp.value();
  const Tensor& lq = logq.value();
  if (lp.shape() != lq.shape() || lp.rank() != 1) {
    throw std::invalid_argument("kl_from_log: operands must be vectors of equal length");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) acc += std::exp(lp[i]) * (lp[i] - lq[i]);
  return logp.graph().record(OpKind::kKl, {logp, logq}, Tensor::scalar(acc));
}

Var nll(const Var& logp, std::size_t y) { return scale(pick(logp, y), -1.0); }

Var cross_entropy(const Var& p, std::size_t y) {
  const Tensor& pv = p.value();
  if (pv.rank() != 1 || y >= pv.size()) {
    throw std::out_of_range("cross_entropy: class index out of range");
  }
  if (pv[y] == 0.0) throw std::domain_error("cross_entropy: infinite loss");
  return p.graph().record(OpKind::kCrossEntropy, {p}, Tensor::scalar(-std::log(pv[y])), 0.0, y);
}

}  // namespace robust
