// SPDX-License-Identifier: Apache-2.0
#include "timepro/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

namespace timepro {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index s : shape) {
    if (s < 0) throw ShapeError("negative axis length in " + to_string(shape));
    n *= s;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void detail::Node::accumulate(const Array& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor Tensor::from(Shape shape, Array data, bool requires_grad) {
  if (timepro::numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  }
  if (!data.allFinite()) throw NumericError("non-finite value in tensor construction");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<Array>(std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = timepro::numel(shape);
  return from(std::move(shape), Array::Zero(n), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = timepro::numel(shape);
  return from(std::move(shape), Array::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, Array::Constant(1, value), requires_grad);
}

Index Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for " + to_string(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return (*node_->value)(0);
}

double Tensor::at(std::initializer_list<Index> index) const {
  if (static_cast<int>(index.size()) != rank()) throw ShapeError("index rank mismatch");
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    const Index len = node_->shape[axis++];
    if (i < 0 || i >= len) throw ShapeError("index out of range");
    flat = flat * len + i;
  }
  return (*node_->value)(flat);
}

Array Tensor::grad() const {
  if (node_->grad.size() == 0) return Array::Zero(numel());
  return node_->grad;
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), data(), requires_grad);
}

Tensor Tensor::make(Shape shape, Array value, const char* op, std::vector<Tensor> parents,
                    std::function<void(const Array&)> backward) {
  return make(std::move(shape), std::make_shared<Array>(std::move(value)), op, std::move(parents),
              std::move(backward));
}

Tensor Tensor::make(Shape shape, std::shared_ptr<Array> value, const char* op,
                    std::vector<Tensor> parents, std::function<void(const Array&)> backward) {
  if (timepro::numel(shape) != value->size()) {
    throw ShapeError(std::string(op) + ": result length does not match " + to_string(shape));
  }
  if (!value->allFinite()) throw NumericError(std::string(op) + " produced a non-finite value");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool tracked = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) tracked = tracked || p.requires_grad();
  }
  if (tracked) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (Tensor& p : parents) node->parents.push_back(std::move(p.node_));
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() needs a scalar root, got " + to_string(shape()));
  ComputationTape tape(*this);
  tape.run(Array::Ones(1));
}

ComputationTape::ComputationTape(const Tensor& root) {
  // Iterative post-order DFS; reversing it puts consumers before producers.
  std::unordered_map<const detail::Node*, bool> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  if (!root.requires_grad()) return;
  stack.emplace_back(root.node(), 0);
  visited[root.node()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited[parent]) {
        visited[parent] = true;
        stack.emplace_back(parent, 0);
      }
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order_.begin(), order_.end());
}

std::ptrdiff_t ComputationTape::index_of(const Tensor& t) const {
  for (std::size_t i = 0; i < order_.size(); ++i) {
    if (order_[i] == t.node()) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

void ComputationTape::run(const Array& seed) const {
  if (order_.empty()) return;
  order_.front()->accumulate(seed);
  for (detail::Node* node : order_) {
    if (!node->backward || node->grad.size() == 0) continue;
    node->backward(node->grad);
    // Interior gradients are not needed after propagation.
    if (!node->parents.empty()) node->grad.resize(0);
  }
}

}  // namespace timepro
