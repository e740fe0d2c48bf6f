#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "slimgan/errors.hpp"

namespace slimgan {

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline thread_local int no_grad_depth = 0;

// One vertex of the dynamic graph. `backward` reads `grad` of this node and
// accumulates into the parents' grads.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Disables graph recording for its lifetime (evaluation, target construction).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Dense row-major double tensor with an optional gradient slot.
///
/// A Tensor is a handle: copies share the same storage and graph node. Leaves
/// created with `requires_grad = true` accumulate gradients on `backward()`;
/// results of operations on such leaves carry the backward closure. Shape
/// `{}` denotes a scalar.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (std::size_t extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }
  static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), 1.0, requires_grad); }
  static Tensor scalar(double value, bool requires_grad = false) { return Tensor({}, {value}, requires_grad); }

  // Result of an operation. Parents are recorded only when one of them
  // requires a gradient and recording is enabled.
  static Tensor from_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                        std::function<void(detail::Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->is_leaf = false;
    for (const auto& t : inputs) out.node_->parents.push_back(t.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // In-place access for leaves (optimizers, initializers, tests).
  std::span<double> mutable_data() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }
  double at(std::size_t i) const { return node_->data.at(i); }

  double item() const {
    if (numel() != 1) throw PreconditionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) {
    if (!node_->is_leaf) throw PreconditionError("requires_grad can only be changed on leaves");
    node_->requires_grad = flag;
  }
  bool is_leaf() const { return node_->is_leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Detached deep copy (a fresh leaf).
  Tensor clone(bool requires_grad = false) const { return Tensor(shape(), node_->data, requires_grad); }

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
  /// calls; intermediate gradients are reset at the start of each sweep.
  void backward() const;

  detail::Node& node() const { return *node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
  if (!defined() || numel() != 1) {
    throw PreconditionError("backward() needs a scalar loss, got shape " +
                            (defined() ? shape_str(shape()) : std::string("<undefined>")));
  }
  if (!node_->requires_grad) throw PreconditionError("backward() on a tensor that is not attached to a graph");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf && n->backward) n->backward(*n);
  }
}

}  // namespace slimgan
