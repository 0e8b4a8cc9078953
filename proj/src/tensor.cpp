#include "scorelab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "scorelab/errors.hpp"

namespace scorelab {

std::size_t Tensor::count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (count(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::ones(std::vector<std::size_t> shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

Tensor Tensor::row(std::vector<double> values) {
  std::vector<std::size_t> shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

double Tensor::scalar_value() const {
  if (!is_scalar()) {
    throw ShapeError("tensor: scalar_value on shape " + shape_str());
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string Tensor::shape_str() const { return shape_str(shape_); }

}  // namespace scorelab
