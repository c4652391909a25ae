// SPDX-License-Identifier: Apache-2.0
//
// Dense n-d tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared Node. Ops that see at least one
// input with requires_grad() record their inputs as parents together with a
// backward rule; everything else produces plain constant nodes, so forward
// passes over frozen weights keep no graph alive.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nhp {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
  bool is_leaf() const { return parents.empty(); }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // In-place access for optimizers and initializers; never use on a node
  // that is already part of a recorded graph.
  std::span<T> mutable_data() { return node_->data; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty() || node_->data.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad() { node_->grad.clear(); }

  T item() const;
  T operator[](std::size_t i) const { return node_->data[i]; }

  // Copy of the values with no tape attachment.
  Tensor detach() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  static Tensor wrap(std::shared_ptr<Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op output. The backward rule is kept only when some input
// requires grad; otherwise the result is a detached constant.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward);

// Nodes reachable from a root, in topological order (inputs first).
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<Node<T>*>& nodes() const { return order_; }

  // Seeds d(root)/d(root) = 1 and visits every node once in reverse order.
  // Gradients of leaves accumulate across calls; intermediate gradients are
  // released after use unless retain_intermediate is set.
  void backward(bool retain_intermediate = false);

 private:
  Tensor<T> root_;
  std::vector<Node<T>*> order_;
};

// Convenience wrapper: loss must be a scalar (one element).
template <typename T>
void backward(const Tensor<T>& loss, bool retain_intermediate = false);

}  // namespace nhp
