#include "posmed/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "posmed/error.hpp"

namespace posmed::nn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("cannot add " + shape_string(other.shape_) + " to " + shape_string(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) off = off * shape_[axis++] + i;
  return off;
}

Tensor uniform_tensor(Shape shape, UniformSource& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.next(lo, hi);
  return t;
}

void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() == expected) return;
  std::string detail;
  if (t.rank() != expected.size()) {
    detail = "rank " + std::to_string(t.rank()) + " != " + std::to_string(expected.size());
  } else {
    for (std::size_t a = 0; a < expected.size(); ++a) {
      if (t.dim(a) != expected[a]) {
        detail = "axis " + std::to_string(a) + " is " + std::to_string(t.dim(a)) + ", expected " +
                 std::to_string(expected[a]);
        break;
      }
    }
  }
  throw ShapeError(what + ": shape " + shape_string(t.shape()) + " vs expected " + shape_string(expected) + " (" +
                   detail + ")");
}

}  // namespace posmed::nn
