#include "robust/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace robust {

namespace {

std::size_t product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void require_valid_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw std::invalid_argument(fmt::format("tensor rank must be 1 or 2, got {}", shape.size()));
  }
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(
        fmt::format("{}: shape mismatch {} vs {}", op, to_string(a.shape()), to_string(b.shape())));
  }
}

void require_vector(const Tensor& a, const char* op) {
  if (a.rank() != 1) throw std::invalid_argument(fmt::format("{}: expected a vector", op));
}

template <class F>
Tensor map(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return Tensor(a.shape(), std::move(out));
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

void require_distribution(const Tensor& p, const char* name) {
  require_vector(p, name);
  double total = 0.0;
  for (double v : p.values()) {
    if (v < 0.0) throw std::invalid_argument(fmt::format("{}: negative probability {}", name, v));
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument(fmt::format("{}: probabilities sum to {}", name, total));
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::domain_error(fmt::format("{}: non-finite value {}", what, v));
  }
}

Tensor::Tensor() : shape_{1}, values_(1, 0.0) {}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  require_valid_shape(shape_);
  values_.assign(product(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  require_valid_shape(shape_);
  if (values_.size() != product(shape_)) {
    throw std::invalid_argument(fmt::format("tensor of shape {} needs {} values, got {}",
                                            to_string(shape_), product(shape_), values_.size()));
  }
  require_finite(values_, "tensor");
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros(const Shape& shape) { return Tensor(shape); }

Tensor Tensor::filled(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(product(shape), value));
}

double Tensor::item() const {
  if (!is_scalar()) throw std::invalid_argument("item() on a non-scalar tensor " + to_string(shape_));
  return values_[0];
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || x.rank() != 1 || w.cols() != x.size()) {
    throw std::invalid_argument(
        fmt::format("matvec: cannot apply {} to {}", to_string(w.shape()), to_string(x.shape())));
  }
  std::vector<double> out(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) acc += w.at(r, c) * x[c];
    out[r] = acc;
  }
  return Tensor::vector(std::move(out));
}

Tensor mattvec(const Tensor& w, const Tensor& v) {
  if (w.rank() != 2 || v.rank() != 1 || w.rows() != v.size()) {
    throw std::invalid_argument(fmt::format("mattvec: cannot apply transpose of {} to {}",
                                            to_string(w.shape()), to_string(v.shape())));
  }
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) out[c] += w.at(r, c) * v[r];
  }
  return Tensor::vector(std::move(out));
}

Tensor outer(const Tensor& a, const Tensor& b) {
  require_vector(a, "outer");
  require_vector(b, "outer");
  std::vector<double> out(a.size() * b.size());
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t c = 0; c < b.size(); ++c) out[r * b.size() + c] = a[r] * b[c];
  }
  return Tensor::matrix(a.size(), b.size(), std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor div(const Tensor& a, const Tensor& b) {
  return zip(a, b, "div", [](double x, double y) { return x / y; });
}
Tensor scale(const Tensor& a, double s) {
  return map(a, [s](double x) { return s * x; });
}
Tensor add_scalar(const Tensor& a, double s) {
  return map(a, [s](double x) { return x + s; });
}
Tensor tanh(const Tensor& a) {
  return map(a, [](double x) { return std::tanh(x); });
}
Tensor exp(const Tensor& a) {
  return map(a, [](double x) { return std::exp(x); });
}
Tensor log(const Tensor& a) {
  return map(a, [](double x) { return std::log(x); });
}

Tensor softmax(const Tensor& z) {
  require_vector(z, "softmax");
  if (z.size() < 2) throw std::invalid_argument("softmax: need at least two logits");
  require_finite(z.values(), "softmax");
  const double top = *std::max_element(z.values().begin(), z.values().end());
  std::vector<double> out(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return Tensor::vector(std::move(out));
}

Tensor log_softmax(const Tensor& z) {
  require_vector(z, "log_softmax");
  if (z.size() < 2) throw std::invalid_argument("log_softmax: need at least two logits");
  const double top = *std::max_element(z.values().begin(), z.values().end());
  double total = 0.0;
  for (double v : z.values()) total += std::exp(v - top);
  const double lse = top + std::log(total);
  return map(z, [lse](double v) { return v - lse; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return Tensor::scalar(acc);
}

Tensor norm_sq(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  return Tensor::scalar(acc);
}

Tensor pick(const Tensor& a, std::size_t index) {
  if (index >= a.size()) {
    throw std::out_of_range(fmt::format("pick: index {} outside {}", index, to_string(a.shape())));
  }
  return Tensor::scalar(a[index]);
}

Tensor scatter(const Tensor& s, std::size_t index, const Shape& shape) {
  Tensor out(shape);
  if (index >= out.size()) throw std::out_of_range("scatter: index out of range");
  out.set(index, s.item());
  return out;
}

Tensor broadcast(const Tensor& s, const Shape& shape) { return Tensor::filled(shape, s.item()); }

double kl_divergence(const Tensor& p, const Tensor& q) {
  require_distribution(p, "kl_divergence(P)");
  require_distribution(q, "kl_divergence(Q)");
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw std::domain_error("kl_divergence: infinite divergence");
    acc += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  // Rounding can leave a tiny negative residue when P ≈ Q.
  return std::max(acc, 0.0);
}

double cross_entropy(const Tensor& p, std::size_t y) {
  require_distribution(p, "cross_entropy");
  if (y >= p.size()) throw std::out_of_range("cross_entropy: class index out of range");
  if (p[y] == 0.0) throw std::domain_error("cross_entropy: infinite loss");
  return -std::log(p[y]);
}

std::size_t argmax(const Tensor& a) {
  return static_cast<std::size_t>(
      std::distance(a.values().begin(), std::max_element(a.values().begin(), a.values().end())));
}

double l1_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += std::abs(x);
  return acc;
}

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

double linf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace robust
