#include "fbd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace fbd {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto extent : shape) {
    if (extent < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= extent;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node>()) {
  const auto n = numel(shape);
  node_->shape = std::move(shape);
  node_->data.assign(static_cast<std::size_t>(n), fill);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out = detach();
  out.node_->requires_grad = node_->requires_grad;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                                 std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (NoGradGuard::grad_enabled()) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_);
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

template <typename T>
std::vector<detail::Node<T>*> build_tape(const Tensor<T>& root) {
  using Node = detail::Node<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; graphs can be deep enough to overflow the stack.
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (!root.defined() || !root.requires_grad()) return order;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw Error("backward on undefined tensor");
  if (loss.size() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw Error("backward on a loss that is not connected to any parameter");
  auto tape = build_tape(loss);
  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    auto* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template std::vector<detail::Node<float>*> build_tape(const Tensor<float>&);
template std::vector<detail::Node<double>*> build_tape(const Tensor<double>&);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace fbd
