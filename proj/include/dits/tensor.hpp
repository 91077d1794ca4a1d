#pragma once

#include <concepts>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dits/common.hpp"
#include "dits/rng.hpp"

namespace dits {

template <class Scalar>
class GraphT;

/// Dense row-major N-d array of real values. Value-semantic handle: copying a
/// tensor shares the underlying buffer, operations allocate fresh buffers.
/// A tensor may carry a node handle into the GraphT that produced it; a
/// detached tensor contributes no gradients.
///
/// Extents are normally positive; a zero extent is permitted as the
/// degenerate empty case (an absent covariate stream, for instance).
template <class Scalar>
class TensorT {
 public:
  TensorT() : data_(std::make_shared<std::vector<Scalar>>()) {}

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<Scalar>>(shape_numel(shape_),
                                                    Scalar(0))) {}

  TensorT(Shape shape, std::vector<Scalar> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<Scalar>>(std::move(values))) {
    if (data_->size() != shape_numel(shape_))
      throw Error("tensor: " + std::to_string(data_->size()) +
                  " values do not fill shape " + shape_str(shape_));
  }

  static TensorT scalar(Scalar v) { return TensorT(Shape{}, {v}); }

  static TensorT full(Shape shape, Scalar v) {
    TensorT t(std::move(shape));
    for (auto& x : *t.data_) x = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  Scalar* data() { return data_->data(); }
  const Scalar* data() const { return data_->data(); }
  std::span<Scalar> values() { return {data_->data(), data_->size()}; }
  std::span<const Scalar> values() const {
    return {data_->data(), data_->size()};
  }

  template <class... Ix>
  Scalar at(Ix... ix) const {
    return (*data_)[offset_of(ix...)];
  }
  template <class... Ix>
  Scalar& at(Ix... ix) {
    return (*data_)[offset_of(ix...)];
  }

  bool attached() const { return graph_ != nullptr; }
  GraphT<Scalar>* graph_ptr() const { return graph_; }
  int node_id() const { return node_; }

  /// Same buffer, no graph participation.
  TensorT detached() const {
    TensorT t = *this;
    t.graph_ = nullptr;
    t.node_ = -1;
    return t;
  }

  /// Deep copy, detached.
  TensorT clone() const {
    return TensorT(shape_, std::vector<Scalar>(*data_));
  }

  /// Same buffer and graph node, reinterpreted shape. Gradients are stored
  /// flat per node, so a view needs no backward rule of its own.
  TensorT view(Shape shape) const {
    if (shape_numel(shape) != size())
      throw Error("view: cannot view " + shape_str(shape_) + " as " +
                  shape_str(shape));
    TensorT t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  const std::shared_ptr<std::vector<Scalar>>& buffer() const { return data_; }

 private:
  friend class GraphT<Scalar>;

  template <class... Ix>
  std::size_t offset_of(Ix... ix) const {
    if (sizeof...(ix) != shape_.size())
      throw Error("tensor: index rank " + std::to_string(sizeof...(ix)) +
                  " does not match shape " + shape_str(shape_));
    auto st = row_major_strides(shape_);
    std::size_t off = 0, d = 0;
    ((off += static_cast<std::size_t>(ix) * st[d++]), ...);
    return off;
  }

  Shape shape_;
  std::shared_ptr<std::vector<Scalar>> data_;
  GraphT<Scalar>* graph_ = nullptr;
  int node_ = -1;
};

/// Reverse-mode differentiation tape. Nodes are recorded in construction
/// order (which is topological); backward() walks them exactly once in
/// reverse, invoking each stored rule with the node's accumulated gradient.
/// Gradient buffers are allocated lazily, so every node's gradient is zero
/// until a contribution arrives. Accumulation is `+=` throughout, which is
/// what makes parameter sharing across streams work.
template <class Scalar>
class GraphT {
 public:
  using Tensor = TensorT<Scalar>;
  using BackwardFn = std::function<void(GraphT&, std::span<const Scalar>)>;

  GraphT() = default;
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  /// Registers `value` as a differentiable leaf. Shares the buffer, so the
  /// caller's tensor is what gets perturbed/updated between passes.
  Tensor leaf(const Tensor& value) {
    Tensor t = value.detached();
    t.graph_ = this;
    t.node_ = reserve(value.size());
    leaf_by_buffer_[value.buffer().get()] = t.node_;
    return t;
  }

  /// Propagates d(loss)/d(node) to every node in the tape.
  void backward(const Tensor& loss) {
    if (loss.graph_ptr() != this || loss.node_id() < 0)
      throw Error("backward: loss tensor does not belong to this graph");
    if (loss.size() != 1)
      throw Error("backward: loss must be scalar, got shape " +
                  shape_str(loss.shape()));
    grads_.clear();
    grads_.resize(nodes_.size());
    grad_buffer(loss.node_id(), 1)[0] = Scalar(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (!grads_[i] || !nodes_[i].back) continue;
      nodes_[i].back(*this, {grads_[i]->data(), grads_[i]->size()});
    }
  }

  /// Gradient of `t` (a tensor attached to this graph); zeros if nothing
  /// was accumulated.
  Tensor grad(const Tensor& t) const {
    if (t.graph_ptr() != this || t.node_id() < 0)
      throw Error("grad: tensor does not belong to this graph");
    Tensor out(t.shape());
    const auto idx = static_cast<std::size_t>(t.node_id());
    if (idx < grads_.size() && grads_[idx])
      std::copy(grads_[idx]->begin(), grads_[idx]->end(), out.data());
    return out;
  }

  /// Gradient lookup for a leaf registered from `original` (matched by
  /// buffer identity). Lets callers fetch gradients without keeping the
  /// bound tensors around.
  Tensor grad_of(const Tensor& original) const {
    auto it = leaf_by_buffer_.find(original.buffer().get());
    if (it == leaf_by_buffer_.end())
      throw Error("grad_of: tensor was never registered as a leaf");
    Tensor out(original.shape());
    const auto idx = static_cast<std::size_t>(it->second);
    if (idx < grads_.size() && grads_[idx])
      std::copy(grads_[idx]->begin(), grads_[idx]->end(), out.data());
    return out;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // --- op plumbing ---

  int reserve(std::size_t numel) {
    nodes_.push_back(Node{numel, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_backward(int node, BackwardFn fn) {
    nodes_[static_cast<std::size_t>(node)].back = std::move(fn);
  }

  void bind(Tensor& out, int node) {
    out.graph_ = this;
    out.node_ = node;
  }

  /// Get-or-create the (zero-initialised) gradient buffer for a node.
  std::vector<Scalar>& grad_buffer(int node, std::size_t numel) {
    auto& slot = grads_[static_cast<std::size_t>(node)];
    if (!slot) slot = std::make_unique<std::vector<Scalar>>(numel, Scalar(0));
    return *slot;
  }

  /// Accumulation target for an op input, or nullptr when the input is
  /// detached (or belongs to another graph, which ops reject up front).
  Scalar* acc_ptr(const Tensor& t) {
    if (t.graph_ptr() != this || t.node_id() < 0) return nullptr;
    return grad_buffer(t.node_id(), t.size()).data();
  }

 private:
  struct Node {
    std::size_t numel;
    BackwardFn back;
  };

  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<std::vector<Scalar>>> grads_;
  std::unordered_map<const void*, int> leaf_by_buffer_;
};

using Tensor = TensorT<double>;
using Graph = GraphT<double>;

template <std::floating_point Scalar>
TensorT<Scalar> randu_t(Rng& rng, Shape shape, Scalar lo, Scalar hi) {
  TensorT<Scalar> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

template <std::floating_point Scalar>
TensorT<Scalar> randn_t(Rng& rng, Shape shape) {
  TensorT<Scalar> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.normal());
  return t;
}

inline Tensor randu(Rng& rng, Shape shape, double lo = 0.0, double hi = 1.0) {
  return randu_t<double>(rng, std::move(shape), lo, hi);
}

inline Tensor randn(Rng& rng, Shape shape) {
  return randn_t<double>(rng, std::move(shape));
}

}  // namespace dits
