#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hspk/error.hpp"

namespace hspk {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Whether newly executed ops record themselves for backward.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T{});
    return grad;
  }
};

}  // namespace detail

template <class T>
class Graph;

/// Dense row-major array that participates in reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage and gradient.
/// Values written by an op are never modified afterwards except through
/// values_mut(), which is reserved for leaf parameters (optimizer updates,
/// initialization, checkpoint loading).
template <class T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{}), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  std::span<T> values_mut() { return node_->value; }
  const std::vector<T>& vec() const { return node_->value; }
  T at(std::size_t i) const { return node_->value.at(i); }

  T item() const {
    if (size() != 1) throw ContractError("item: tensor is not a scalar " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Fresh leaf holding a copy of the values, cut from the graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  Tensor clone_leaf(bool requires_grad) const {
    return Tensor(shape(), node_->value, requires_grad);
  }

  // Populates grad on every requires_grad tensor reachable from this scalar.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  const char* op_name() const { return node_->op; }

 private:
  std::shared_ptr<Node> node_;
};

/// Topologically ordered record of the operations that produced a tensor.
///
/// Built from the root by depth-first search over parents; only nodes that
/// require gradients are recorded.
template <class T>
class Graph {
 public:
  using Node = detail::Node<T>;

  explicit Graph(const Tensor<T>& root) {
    if (!root.defined()) throw ContractError("graph: undefined root");
    std::unordered_set<const Node*> seen;
    // Iterative post-order DFS: a node is emitted after all of its parents.
    std::vector<std::pair<Node*, std::size_t>> stack;
    if (root.requires_grad()) {
      stack.emplace_back(root.node().get(), 0);
      seen.insert(root.node().get());
    }
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) {
          stack.emplace_back(parent, 0);
        }
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  // Inputs first, root last.
  const std::vector<Node*>& order() const { return order_; }
  bool empty() const { return order_.empty(); }

  // Visits nodes root-first, calling each node's backward exactly once.
  template <class Visitor>
  void for_each_reverse(Visitor&& visit) const {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) visit(**it);
  }

 private:
  std::vector<Node*> order_;
};

template <class T>
void Tensor<T>::backward() const {
  if (size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(shape()));
  }
  Graph<T> graph(*this);
  if (graph.empty()) throw ContractError("backward: loss does not depend on any trainable tensor");
  // The root's gradient is reset so that repeated calls do not compound.
  node_->grad.assign(1, T{1});
  graph.for_each_reverse([](Node& n) {
    if (!n.is_leaf() && !n.grad.empty()) {
      n.backward(n);
    }
  });
  // Intermediate gradients are scratch; leaves keep their accumulated grads.
  graph.for_each_reverse([this](Node& n) {
    if (!n.is_leaf() && &n != node_.get()) {
      n.grad.clear();
      n.grad.shrink_to_fit();
    }
  });
}

namespace detail {

template <class T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (const T& x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

// Wraps freshly computed values into a result tensor and, when gradients are
// enabled and some input requires them, records the backward closure.
template <class T, class Backward>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::initializer_list<Tensor<T>> inputs, Backward&& backward) {
  check_finite(values, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::forward<Backward>(backward);
  }
  return Tensor<T>(std::move(node));
}

template <class T, class Backward>
Tensor<T> make_result_n(const char* op, Shape shape, std::vector<T> values,
                        const std::vector<Tensor<T>>& inputs, Backward&& backward) {
  check_finite(values, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::forward<Backward>(backward);
  }
  return Tensor<T>(std::move(node));
}

// Gradient sink of parent i, or nullptr when that parent does not need one.
template <class T>
std::vector<T>* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

}  // namespace detail

}  // namespace hspk
