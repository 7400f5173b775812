#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace meta {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One value in the computation graph. Operation outputs keep their inputs
// alive through `parents`, so the graph lives exactly as long as the tensors
// that reference it.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty = no gradient yet
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Propagates this node's grad into the parents' grads.
  std::function<void(TensorNode&)> backward;

  bool has_grad() const { return !grad.empty(); }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major float64 tensor with reverse-mode differentiation.
//
// Copies share the underlying node (handle semantics). A graph and the tensors
// in it must stay on one thread during a forward/backward pass; tensors that do
// not require gradients are never mutated by operations and may be shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Direct write access, used by optimizers on leaf parameters.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  // Drops the gradient buffer so that backward() may run again.
  void zero_grad();

  // New leaf with a copy of the values and no history.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  const char* op_name() const;
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  detail::TensorNode& checked() const;
  std::shared_ptr<detail::TensorNode> node_;
};

// Populates grad() of every requires_grad tensor reachable from `loss`.
//
// The loss must hold exactly one element. A second call that would touch a
// gradient already populated throws GradientStateError; call zero_grad() on
// the parameters in between. Tensors that do not require gradients stop the
// traversal and receive nothing.
void backward(const Tensor& loss);

// Linear algebra. matmul takes rank-2 operands, bmm rank-3 with equal batch.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor bmm(const Tensor& a, const Tensor& b);
// Swaps the last two axes (rank 2 or 3).
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Elementwise. `add` also accepts a rank-1 `b` matching the last axis of `a`,
// broadcast over the leading axes (bias addition). No other broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor relu(const Tensor& x);
// Natural log; inputs must be strictly positive.
Tensor log(const Tensor& x);

// Row-wise along the last axis.
Tensor softmax_rows(const Tensor& x);
inline constexpr double kLayerNormEpsilon = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Joins tensors of equal leading shape along the last axis.
Tensor concat_last_dim(std::span<const Tensor> parts);

Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);

}  // namespace meta
