#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace skel3d {

// SIMD-aligned so that vectorized reductions take the same path for every allocation.
using AlignedDoubles = std::vector<double, Eigen::aligned_allocator<double>>;

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Image-like tensors use NCHW order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  AlignedDoubles& storage() noexcept { return values_; }
  const AlignedDoubles& storage() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // 4-D accessors (NCHW).
  double& at(int n, int c, int h, int w) {
    return values_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(int n, int c, int h, int w) const {
    return values_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(double v);
  // Same values, new shape (element count must match).
  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);

  bool all_finite() const;
  double sum() const;
  double squared_norm() const;

  // Copies slab [index] along the leading axis.
  Tensor slice0(int index) const;
  static Tensor stack0(std::span<const Tensor> parts);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  AlignedDoubles values_;
};

}  // namespace skel3d
