#pragma once

// Dense double-precision tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a cheap handle to a shared node. Results of differentiable ops
// remember their inputs and a backward closure; calling backward() on a
// scalar walks the graph in reverse topological order and accumulates
// gradients into every node that requires them. Leaf gradients accumulate
// across backward() calls until zero_grad().
//
// Images are rank-3 tensors laid out channel-major (C x H x W).

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace avgan {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::span<double> grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  /// Size of dimension i; negative i counts from the back.
  int dim(int i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access. Intended for leaves (parameters, test fixtures).
  std::span<double> mutable_data();
  double item() const;
  double at(int c, int y, int x) const;

  bool requires_grad() const;
  /// Accumulated gradient; all zeros if nothing has been accumulated.
  std::vector<double> grad() const;
  bool has_grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Seeds d(this)/d(this) = 1. Only valid on single-element tensors.
  void backward() const;

  /// Same values, no history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Stable identity of the underlying storage.
  const void* id() const { return node_.get(); }

  // Op construction: `inputs` are recorded only when gradients are enabled
  // and at least one input requires them.
  static Tensor from_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                        std::function<void(detail::Node&)> backward);

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph construction in its scope (inference, metrics).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace avgan
