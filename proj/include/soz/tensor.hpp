#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "soz/errors.hpp"

namespace soz {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major n-d array. `data().size() == numel(shape())` always holds.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(VectorX<Scalar>::Zero(checked_numel(shape_))) {}

  Tensor(Shape shape, VectorX<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != data_.size()) {
      throw ShapeError("tensor: shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                       " elements");
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Eigen::Map<const VectorX<Scalar>>(values.begin(), Index(values.size()))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor scalar(Scalar value) { return constant({1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  Index size() const noexcept { return data_.size(); }

  VectorX<Scalar>& data() noexcept { return data_; }
  const VectorX<Scalar>& data() const noexcept { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// View of a rank-2 tensor as a row-major matrix. Not available on
  /// temporaries, whose storage would dangle.
  Eigen::Map<RowMatrixX<Scalar>> matrix() & {
    require_rank(2);
    return {data_.data(), shape_[0], shape_[1]};
  }
  Eigen::Map<const RowMatrixX<Scalar>> matrix() const& {
    require_rank(2);
    return {data_.data(), shape_[0], shape_[1]};
  }
  void matrix() && = delete;
  void matrix() const&& = delete;

  /// Same data, new extents.
  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  static Index checked_numel(const Shape& shape) {
    for (Index e : shape) {
      if (e < 0) throw ShapeError("tensor: negative extent in " + to_string(shape));
    }
    return numel(shape);
  }

  void require_rank(std::size_t r) const {
    if (shape_.size() != r) {
      throw ShapeError("tensor: expected rank " + std::to_string(r) + ", got " + to_string(shape_));
    }
  }

  Shape shape_;
  VectorX<Scalar> data_;
};

namespace detail {

bool& grad_mode_flag();

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return grad.size() == value.size() && !grad.shape().empty(); }

  void accumulate(const VectorX<Scalar>& g) {
    if (!has_grad()) {
      grad = Tensor<Scalar>(value.shape(), g);
    } else {
      grad.data() += g;
    }
  }

  Tensor<Scalar>& ensure_grad() {
    if (!has_grad()) grad = Tensor<Scalar>::zeros(value.shape());
    return grad;
  }
};

}  // namespace detail

/// Gradient recording is on by default; a live NoGradGuard turns it off for the
/// current thread (used for evaluation and feature extraction).
inline bool grad_enabled() { return detail::grad_mode_flag(); }

class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to a node of the recorded computation: a value, an optional gradient
/// slot, and the closure that propagates gradients to its inputs. Copies share
/// the node.
template <typename Scalar_>
class Variable {
 public:
  using Scalar = Scalar_;
  using NodeT = detail::Node<Scalar>;

  Variable() : node_(std::make_shared<NodeT>()) {}

  explicit Variable(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<NodeT>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<Scalar>& value() const noexcept { return node_->value; }
  Tensor<Scalar>& mutable_value() noexcept { return node_->value; }
  const Shape& shape() const noexcept { return node_->value.shape(); }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  bool has_grad() const { return node_->has_grad(); }

  /// Gradient buffer; zeros of the value's shape if nothing was accumulated.
  const Tensor<Scalar>& grad() const { return node_->ensure_grad(); }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  /// Leaf parameters have no recorded inputs.
  bool is_leaf() const noexcept { return node_->parents.empty(); }

  const std::shared_ptr<NodeT>& node() const noexcept { return node_; }

  /// Result node of an op. Records the backward closure only when some input
  /// needs a gradient and recording is enabled.
  static Variable make_result(Tensor<Scalar> value, std::vector<Variable> inputs, std::function<void(NodeT&)> fn) {
    Variable out(std::move(value));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->backward_fn = std::move(fn);
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) out.node_->parents.push_back(in.node_);
    return out;
  }

 private:
  std::shared_ptr<NodeT> node_;
};

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
/// calls; interior gradients are recomputed on every call.
template <typename Scalar>
void backward(const Variable<Scalar>& root) {
  using NodeT = detail::Node<Scalar>;
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + to_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<NodeT*> order;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  std::unordered_set<NodeT*> visited;
  // Iterative post-order DFS gives a topological order of the recorded graph.
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* n : order) {
    if (!n->parents.empty()) n->grad = Tensor<Scalar>();
  }
  root.node()->accumulate(VectorX<Scalar>::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

}  // namespace soz
