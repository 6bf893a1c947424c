#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "skel3d/core/tensor.hpp"

namespace skel3d::nn {

// One value in a reverse-mode computation graph. Parameters are long-lived
// leaf nodes; their gradients accumulate across backward passes until the
// optimizer clears them.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
  // Gradient slot of input i, or nullptr when that input does not need one.
  Tensor* input_grad(std::size_t i);
  const Tensor& input(std::size_t i) const { return inputs[i]->value; }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node>& node() const noexcept { return node_; }

  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

// Trainable leaf.
Var parameter(Tensor init);
// Non-trainable input.
Var constant(Tensor value);

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Wraps an op result. The backward closure is kept only when recording is on
// and at least one input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Back-propagates from a scalar. Gradients accumulate into every reachable
// node that requires one; intermediate gradients are released afterwards.
void backward(const Var& loss, double seed = 1.0);

}  // namespace skel3d::nn
