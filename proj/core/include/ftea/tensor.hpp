#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftea {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a documented precondition of an operation is violated.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(const Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense row-major tensor of doubles with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle; copies alias the same storage. Operations never
/// mutate their inputs, so the graph recorded by an op stays valid until
/// backward() consumes it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  std::vector<double> values() const;
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Value copy with no history and no gradient tracking.
  Tensor detach() const;

  /// Runs reverse-mode differentiation from this scalar. Gradients accumulate
  /// into every reachable leaf with requires_grad; interior nodes are released.
  void backward() const;

  const detail::NodePtr& node() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;

  friend Tensor make_result(Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                            std::function<void(const detail::Node&)> backward);
};

/// Builds an op output. When any input tracks gradients the result records
/// `backward`, which must accumulate into the inputs' grad buffers.
Tensor make_result(Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                   std::function<void(const detail::Node&)> backward);

inline Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                          std::function<void(const detail::Node&)> backward) {
  return make_result(std::move(shape), std::move(data), std::span<const Tensor>(inputs.begin(), inputs.size()),
                     std::move(backward));
}

}  // namespace ftea
