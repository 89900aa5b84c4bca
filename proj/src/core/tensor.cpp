#include "factordiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "factordiff/error.hpp"

namespace factordiff {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::shape:
      return "shape";
    case ErrorKind::domain:
      return "domain";
    case ErrorKind::numeric:
      return "numeric";
    case ErrorKind::config:
      return "config";
    case ErrorKind::io:
      return "io";
    case ErrorKind::format:
      return "format";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

std::size_t element_count(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      out += ",";
    }
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<const std::vector<double>>(element_count(shape_), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  require(element_count(shape_) == values.size(), ErrorKind::shape,
          "tensor shape " + to_string(shape_) + " does not match " +
              std::to_string(values.size()) + " values");
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < shape_.size(), ErrorKind::shape,
          "axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  return shape_[axis];
}

double Tensor::at(std::size_t i) const {
  require(i < size(), ErrorKind::shape, "index " + std::to_string(i) + " out of range");
  return (*data_)[i];
}

double Tensor::item() const {
  require(size() == 1, ErrorKind::shape,
          "item() needs a single-element tensor, got " + to_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::reshape(Shape shape) const {
  require(element_count(shape) == size(), ErrorKind::shape,
          "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_->begin(), data_->end(), [](double v) { return std::isfinite(v); });
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape_ == b.shape_ && (a.data_ == b.data_ || *a.data_ == *b.data_);
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), ErrorKind::shape,
          std::string(what) + ": shapes " + to_string(a.shape()) + " and " +
              to_string(b.shape()) + " differ");
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) { return axpby(1.0, a, 1.0, b); }

Tensor operator-(const Tensor& a, const Tensor& b) { return axpby(1.0, a, -1.0, b); }

Tensor operator*(double s, const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) {
    v *= s;
  }
  return Tensor(a.shape(), std::move(out));
}

Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
  require_same_shape(x, y, "axpby");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a * x[i] + b * y[i];
  }
  return Tensor(x.shape(), std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace factordiff
