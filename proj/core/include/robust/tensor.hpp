#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace robust {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Dense row-major float64 array of rank 1 or 2.
///
/// Every entry is finite; constructing a tensor from NaN or Inf throws
/// std::domain_error. A scalar is a rank-1 tensor of length one.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(const Shape& shape);
  static Tensor filled(const Shape& shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : 1; }
  bool is_scalar() const { return shape_.size() == 1 && shape_[0] == 1; }

  double operator[](std::size_t i) const { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  std::span<const double> values() const { return values_; }
  const std::vector<double>& data() const { return values_; }

  /// Mutable access; callers restore finiteness before the tensor reaches an op.
  std::span<double> mutable_values() { return values_; }
  void set(std::size_t i, double v) { values_[i] = v; }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Throws std::domain_error naming `what` if any entry is non-finite.
void require_finite(std::span<const double> values, const char* what);

// Eager kernels. These back the graph ops and are used directly on hot
// evaluation paths that never need gradients.
Tensor matvec(const Tensor& w, const Tensor& x);
Tensor mattvec(const Tensor& w, const Tensor& v);
Tensor outer(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softmax(const Tensor& z);
Tensor log_softmax(const Tensor& z);
Tensor sum(const Tensor& a);
Tensor norm_sq(const Tensor& a);
Tensor pick(const Tensor& a, std::size_t index);
Tensor scatter(const Tensor& s, std::size_t index, const Shape& shape);
Tensor broadcast(const Tensor& s, const Shape& shape);

/// Σ P_i ln(P_i / Q_i) with 0·ln 0 = 0. Both inputs must be probability
/// vectors (nonnegative, summing to 1 within 1e-9). Throws std::domain_error
/// ("infinite divergence") when some P_i > 0 meets Q_i == 0.
double kl_divergence(const Tensor& p, const Tensor& q);

/// −ln p_y. Throws std::domain_error ("infinite loss") when p_y == 0.
double cross_entropy(const Tensor& p, std::size_t y);

std::size_t argmax(const Tensor& a);
double l1_norm(std::span<const double> v);
double l2_norm(std::span<const double> v);
double linf_norm(std::span<const double> v);

}  // namespace robust
