#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vlur/core/tensor.hpp"

namespace vlur {

// Reverse-mode autodiff on a dynamically built tape. A VarT is a handle to a
// graph node holding a value tensor and, after backward(), its gradient.
// Backward functions receive the node itself and accumulate into the parents'
// grad tensors, so nodes never capture themselves.

template <class T>
struct NodeT;

template <class T>
class VarT {
 public:
  VarT() = default;
  explicit VarT(std::shared_ptr<NodeT<T>> n) : n_(std::move(n)) {}
  VarT(TensorT<T> value, bool requires_grad);

  bool defined() const { return static_cast<bool>(n_); }
  NodeT<T>* node() const { return n_.get(); }
  const std::shared_ptr<NodeT<T>>& node_ptr() const { return n_; }

  const TensorT<T>& val() const { return n_->value; }
  TensorT<T>& val_mut() { return n_->value; }
  TensorT<T>& grad() const;
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const Shape& shape() const { return n_->value.shape; }
  int64_t numel() const { return n_->value.numel(); }

  void zero_grad();
  void backward() const;

 private:
  std::shared_ptr<NodeT<T>> n_;
};

template <class T>
struct NodeT {
  TensorT<T> value;
  TensorT<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<VarT<T>> parents;
  std::function<void(NodeT<T>&)> backward_fn;

  TensorT<T>& grad_buffer() {
    if (grad.shape != value.shape) grad = TensorT<T>::zeros(value.shape);
    return grad;
  }
};

template <class T>
VarT<T>::VarT(TensorT<T> value, bool requires_grad) {
  n_ = std::make_shared<NodeT<T>>();
  n_->value = std::move(value);
  n_->requires_grad = requires_grad;
}

template <class T>
TensorT<T>& VarT<T>::grad() const {
  return n_->grad_buffer();
}

template <class T>
void VarT<T>::zero_grad() {
  if (n_) n_->grad = TensorT<T>();
}

// Thread-local gradient mode, off during inference and numeric probing.
inline bool& grad_mode_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGradGuard() { grad_mode_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
VarT<T> make_leaf(TensorT<T> value, bool requires_grad = false) {
  return VarT<T>(std::move(value), requires_grad && grad_mode_enabled());
}

// Wires up a new node. If gradients are globally off or no parent needs
// them, the node is detached and the backward closure is dropped so eval
// passes carry no tape.
template <class T>
VarT<T> make_op(TensorT<T> value, std::vector<VarT<T>> parents,
                std::function<void(NodeT<T>&)> backward_fn) {
  bool need = false;
  if (grad_mode_enabled())
    for (const auto& p : parents)
      if (p.requires_grad()) need = true;
  VarT<T> out(std::move(value), need);
  if (need) {
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

// Accumulates t into the parent's grad buffer (no-op when grads not needed).
template <class T>
void accumulate_grad(const VarT<T>& parent, const TensorT<T>& t) {
  if (!parent.requires_grad()) return;
  TensorT<T>& g = parent.grad();
  const int64_t n = g.numel();
  T* gp = g.ptr();
  const T* tp = t.ptr();
  for (int64_t i = 0; i < n; ++i) gp[i] += tp[i];
}

template <class T>
void VarT<T>::backward() const {
  if (!n_ || n_->value.numel() != 1)
    throw ShapeError("backward() requires a defined scalar variable");
  // Post-order DFS for a topological order of the reachable graph.
  std::vector<NodeT<T>*> order;
  std::unordered_set<NodeT<T>*> visited;
  std::vector<std::pair<NodeT<T>*, size_t>> stack;
  stack.emplace_back(n_.get(), 0);
  visited.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      NodeT<T>* p = node->parents[idx++].node();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  n_->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<T>* node = *it;
    if (node->backward_fn && node->requires_grad) node->backward_fn(*node);
  }
}

using Varf = VarT<float>;
using Vard = VarT<double>;

}  // namespace vlur
