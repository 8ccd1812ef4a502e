#include "d2l/nncore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace d2l {

namespace {
std::size_t element_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
  }
}

std::size_t Tensor::cols() const {
  if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
  return data_.size() / shape_[0];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(const char* what) const {
  if (!all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  const std::size_t c = cols();
  Tensor out({indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return out;
}

void Tensor::append_rows(const Tensor& other) {
  if (other.empty()) return;
  if (empty()) {
    *this = other;
    return;
  }
  if (other.cols() != cols()) throw ShapeError("append_rows: column mismatch");
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  shape_[0] += other.rows();
}

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

}  // namespace d2l
