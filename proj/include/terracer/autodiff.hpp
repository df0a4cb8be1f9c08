#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "terracer/tensor.hpp"

namespace terracer {

/// One record on the reverse-mode tape: the op that produced a value, the
/// values it consumed, and a closure that pushes gradients back into them.
///
/// Graphs are built eagerly: calling an op in terracer::ops computes the
/// output immediately and appends a node. Nodes are immutable once created
/// except for their gradient buffer, which backward() fills. A node read by
/// k downstream consumers receives the sum of k contributions because each
/// consumer's closure accumulates with +=.
///
/// Distinct graphs may live on distinct threads; the gradient-recording
/// switch below is thread-local and nodes share no global state.
template <typename T>
struct Node {
  std::string op;
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  Tensor<T>& grad_buf() {
    if (grad.numel() == 0) grad = Tensor<T>(value.shape());
    return grad;
  }

  void clear_grad() {
    if (grad.numel() != 0) grad.fill(T(0));
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false,
                 std::string op = "leaf") {
  auto n = std::make_shared<Node<T>>();
  n->op = std::move(op);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_mode() { return detail::grad_mode_flag(); }

/// Scoped "inference only" switch: ops created while a guard is alive keep
/// no parents and no closures, so intermediate values free as soon as the
/// caller drops them.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Wraps a freshly computed tensor in a node. Parents and the closure are
/// kept only when some parent wants gradients and recording is on.
template <typename T>
Var<T> make_op(std::string op, Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->op = std::move(op);
  n->value = std::move(value);
  bool need = grad_mode();
  if (need) {
    need = false;
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        need = true;
        break;
      }
  }
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

/// Reverse accumulation from a scalar root. Each reachable node is visited
/// exactly once, in reverse topological order; subgraphs that do not
/// require gradients are never entered.
template <typename T>
void backward(const Var<T>& root) {
  if (!root) throw ConfigError("backward on null node");
  if (root->value.numel() != 1)
    throw ConfigError("backward root must be scalar, got shape " +
                      shape_str(root->value.shape()));
  if (!root->requires_grad) return;

  // Iterative DFS emitting reverse topological order (node before its
  // inputs).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  struct Frame {
    Node<T>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  visited.insert(root.get());
  stack.push_back({root.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<T>* p = f.node->parents[f.next_parent++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->grad_buf().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

template <typename T>
void zero_grads(const std::vector<Var<T>>& vars) {
  for (const auto& v : vars)
    if (v) v->clear_grad();
}

}  // namespace terracer
