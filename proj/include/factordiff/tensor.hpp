#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace factordiff {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Tensors are immutable values: the element buffer is shared between copies
/// and never written after construction, so a Tensor can be handed to other
/// threads or captured by the autodiff tape without copying.
class Tensor {
 public:
  /// Rank-0 tensor holding 0.0.
  Tensor();
  /// Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_->size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const noexcept { return {data_->data(), data_->size()}; }
  const double* data() const noexcept { return data_->data(); }
  double operator[](std::size_t i) const noexcept { return (*data_)[i]; }
  double at(std::size_t i) const;

  /// Value of a single-element tensor.
  double item() const;

  /// Same elements viewed under a new shape with the same element count.
  Tensor reshape(Shape shape) const;

  std::vector<double> to_vector() const { return *data_; }
  bool all_finite() const noexcept;

  /// Exact equality of shape and every element (bitwise for non-NaN values).
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

// Value-level arithmetic on equal-shaped tensors. These never touch the
// autodiff tape; use the ops in ops.hpp inside a Graph.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
/// a*x + b*y, elementwise.
Tensor axpby(double a, const Tensor& x, double b, const Tensor& y);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace factordiff
