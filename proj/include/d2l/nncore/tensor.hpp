#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2l {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
/// NaN or Inf reached a tensor.
struct NumericError : Error {
  using Error::Error;
};
struct PreconditionError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

/// Dense row-major array of doubles. Most tensors in this project are 2-D
/// [batch, width]; biases are stored as [1, width].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor row_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const double& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  void fill(double v);
  bool all_finite() const;
  /// Throws NumericError naming `what` if any element is NaN/Inf.
  void require_finite(const char* what) const;

  /// Rows picked by index, in order.
  Tensor gather_rows(std::span<const std::size_t> indices) const;
  /// Appends the rows of `other` (same column count).
  void append_rows(const Tensor& other);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_string(const Shape& s);

/// Trainable tensor with its gradient accumulator.
struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape(), 0.0) {}
  void zero_grad() { grad.fill(0.0); }
};

}  // namespace d2l
