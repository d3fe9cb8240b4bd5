#include "rsvp/numerics/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "rsvp/error.hpp"

namespace rsvp::num {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() noexcept { return g_grad_enabled; }
void GradMode::set_enabled(bool on) noexcept { g_grad_enabled = on; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_->grad.size() == node_->value.size()) {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  } else {
    node_->grad.assign(node_->value.size(), T(0));
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t(node_->shape, node_->value, node_->requires_grad);
  t.node_->grad = node_->grad;
  return t;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  using NodeT = detail::Node<T>;
  NodeT* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; `order` ends up children-before-parents.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* n : order) {
    if (n->is_leaf()) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->value.size(), T(0));
    }
  }
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace rsvp::num
