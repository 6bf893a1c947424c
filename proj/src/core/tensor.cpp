#include "skel3d/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "skel3d/core/error.hpp"

namespace skel3d {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InputError("negative tensor dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (shape_numel(shape_) != values_.size()) {
    throw InputError("tensor value count " + std::to_string(values_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != values_.size()) {
    throw InputError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

Tensor Tensor::slice0(int index) const {
  if (shape_.empty() || index < 0 || index >= shape_[0]) throw InputError("slice0 index out of range");
  Shape sub(shape_.begin() + 1, shape_.end());
  const std::size_t stride = shape_numel(sub);
  std::vector<double> vals(values_.begin() + static_cast<std::ptrdiff_t>(stride * index),
                           values_.begin() + static_cast<std::ptrdiff_t>(stride * (index + 1)));
  return Tensor(std::move(sub), std::move(vals));
}

Tensor Tensor::stack0(std::span<const Tensor> parts) {
  if (parts.empty()) throw InputError("stack0 of zero tensors");
  Shape shape = parts.front().shape();
  for (const Tensor& p : parts) {
    if (p.shape() != shape) throw InputError("stack0 shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(shape));
  }
  std::vector<double> vals;
  vals.reserve(parts.size() * parts.front().numel());
  for (const Tensor& p : parts) vals.insert(vals.end(), p.storage().begin(), p.storage().end());
  shape.insert(shape.begin(), static_cast<int>(parts.size()));
  return Tensor(std::move(shape), std::move(vals));
}

}  // namespace skel3d
