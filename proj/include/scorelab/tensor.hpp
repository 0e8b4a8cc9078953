#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace scorelab {

/// Dense multi-dimensional array of doubles in row-major order.
/// The carrier for embeddings, activations and trainable values.
class Tensor {
 public:
  Tensor() = default;

  // Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);

  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor ones(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  // 1-D tensor from values.
  static Tensor row(std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool is_scalar() const { return data_.size() == 1 && shape_.size() <= 1; }
  double scalar_value() const;

  bool all_finite() const;

  // "[2,3]" style, for diagnostics.
  std::string shape_str() const;
  static std::string shape_str(const std::vector<std::size_t>& shape);

  static std::size_t count(const std::vector<std::size_t>& shape);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace scorelab
