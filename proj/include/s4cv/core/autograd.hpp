#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "s4cv/core/tensor.hpp"

namespace s4cv {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<T>&)> backward_fn;

  Tensor<T>& grad_ref() {
    if (grad.shape() != value.shape() || grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty() || value.empty(); }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

// Handle to a node of the computation graph. Cheap to copy; copies alias.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(int axis) const { return node_->value.dim(axis); }
  std::int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // Gradient accumulated by backward(); zeros if nothing reached this node.
  const Tensor<T>& grad() const { return node_->grad_ref(); }
  Tensor<T>& mutable_grad() { return node_->grad_ref(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  T item() const {
    if (node_->value.numel() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op result. `backward` receives the output gradient and must
// accumulate into the parents it captured. Skips recording when no input
// needs gradients or recording is disabled.
template <typename T, typename Backward>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs)
      if (in.requires_grad()) n->parents.push_back(in.ptr());
    n->backward_fn = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(n));
}

template <typename T, typename Backward>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs)
      if (in.requires_grad()) n->parents.push_back(in.ptr());
    n->backward_fn = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(n));
}

// Reverse-mode sweep from a scalar root. Gradients accumulate into leaves;
// interior nodes are released as they are consumed.
template <typename T>
void backward(const Var<T>& root, T seed = T(1)) {
  if (!root.requires_grad()) return;
  if (root.numel() != 1) throw DimensionError("backward() root must be scalar, got " + shape_str(root.shape()));

  // Strong references keep interior nodes alive while their children's
  // closures are released.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{root.ptr(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto p = n->parents[next++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(std::move(n));
      stack.pop_back();
    }
  }

  root.node().grad_ref().fill(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    if (!n->backward_fn) continue;
    if (n->has_grad()) n->backward_fn(n->grad_ref());
    n->backward_fn = nullptr;
    n->parents.clear();
    if (n != &root.node()) n->grad = Tensor<T>();
  }
}

// Accumulate helper for op backward closures.
template <typename T>
inline Tensor<T>* grad_of(const Var<T>& v) {
  return v.requires_grad() ? &v.node().grad_ref() : nullptr;
}

}  // namespace s4cv
