#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "dhp/tensor.hpp"

namespace dhp {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into the parents' grads.
  std::function<void(Node& self)> backward;
};

/// Adds `g` into `node.grad`, materializing it on first use.
void accumulate(Node& node, const Tensor& g);

}  // namespace detail

/// Disables tape recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

/// Handle to a node of the dynamic tape.
///
/// Copies share the node. Leaves created with `requires_grad` collect
/// gradients across `backward()` calls until `zero_grad()`. Node ids grow
/// monotonically with creation, so every node's parents have smaller ids and
/// descending id order is a reverse topological order of any tape.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  /// Interior node produced by an op. `backward` may be empty when no parent
  /// needs a gradient, in which case the node is recorded as a constant.
  static Var from_op(Tensor value, std::vector<Var> parents,
                     std::function<void(detail::Node&)> backward);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Mutable access for optimizers and initializers acting on leaves.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or zeros of the value's shape when nothing was accumulated.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  std::uint64_t id() const { return node_->id; }

  /// Reverse pass from a single-element output, seeding d(out)/d(out) = 1.
  void backward() const;
  /// Reverse pass with an explicit output gradient.
  void backward(const Tensor& seed) const;

  /// A constant copy of the value, cut from the tape.
  Var detach() const { return Var(node_->value, false); }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

}  // namespace dhp
