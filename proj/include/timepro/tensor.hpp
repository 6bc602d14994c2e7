// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace timepro {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an operation produces NaN/Inf from its inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::shared_ptr<Array> value;
  Array grad;  // empty until the first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Receives the gradient of this node and accumulates into the parents.
  std::function<void(const Array&)> backward;

  void accumulate(const Array& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) grad = Array::Zero(value->size());
    grad += g;
  }
};

}  // namespace detail

/// Dense row-major tensor of doubles with optional reverse-mode tracking.
///
/// Tensors are cheap handles: copies share the same node. Operations never
/// mutate their inputs; `mutable_data()` exists for optimizers and
/// finite-difference probes acting on leaves.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, Array data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return node_->value->size(); }

  const Array& data() const { return *node_->value; }
  Array& mutable_data() { return *node_->value; }
  double item() const;
  double at(std::initializer_list<Index> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient buffer; zeros of the value's shape when nothing accumulated.
  Array grad() const;
  void zero_grad() { node_->grad.resize(0); }

  /// Reverse sweep from this scalar, seeding d(self)/d(self) = 1.
  void backward() const;

  /// Same values, fresh leaf with no history.
  Tensor detach() const;
  /// Deep copy of the values as a new leaf.
  Tensor clone(bool requires_grad = false) const;

  const char* op_name() const { return node_->op; }

  // Construction hook used by the op implementations.
  static Tensor make(Shape shape, std::shared_ptr<Array> value, const char* op,
                     std::vector<Tensor> parents,
                     std::function<void(const Array&)> backward);
  static Tensor make(Shape shape, Array value, const char* op, std::vector<Tensor> parents,
                     std::function<void(const Array&)> backward);

  detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class ComputationTape;
};

/// Topologically ordered record of the graph reachable from a root.
///
/// Every node in `order()` appears after all of its consumers, so a single
/// pass in that order visits each node exactly once.
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor& root);
  const std::vector<detail::Node*>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }
  /// Position of a node in the sweep, or -1 when unreachable.
  std::ptrdiff_t index_of(const Tensor& t) const;
  void run(const Array& seed) const;

 private:
  std::vector<detail::Node*> order_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace timepro
