#include "dhp/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace dhp {

namespace {

thread_local int no_grad_depth = 0;
std::atomic<std::uint64_t> next_node_id{1};

}  // namespace

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

namespace detail {

void accumulate(Node& node, const Tensor& g) {
  if (!node.requires_grad) return;
  if (g.shape() != node.value.shape()) {
    throw ShapeError("gradient shape " + to_string(g.shape()) + " does not match value " +
                     to_string(node.value.shape()));
  }
  if (node.grad.empty()) {
    node.grad = g;
    return;
  }
  auto dst = node.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
}

Var Var::from_op(Tensor value, std::vector<Var> parents,
                 std::function<void(detail::Node&)> backward) {
  Var out(std::move(value), false);
  if (!grad_enabled() || !backward) return out;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.requires_grad(); });
  if (!needs) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor::zeros(node_->value.shape());
  return node_->grad;
}

void Var::backward() const {
  if (node_->value.numel() != 1) {
    throw ShapeError("backward() without a seed needs a single-element output, got " +
                     to_string(node_->value.shape()));
  }
  backward(Tensor::ones(node_->value.shape()));
}

void Var::backward(const Tensor& seed) const {
  if (!node_->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

  detail::accumulate(*node_, seed);
  for (detail::Node* n : order) {
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
      // Interior gradients are consumed; only leaves keep theirs.
      n->grad = Tensor();
    }
  }
}

}  // namespace dhp
