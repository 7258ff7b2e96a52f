#pragma once

#include <cassert>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "siamdepth/error.hpp"
#include "siamdepth/tensor.hpp"

namespace siamdepth {

using NodeId = std::size_t;

/// A named, optionally trainable tensor. Names are stable checkpoint keys.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

/// Ordered parameter collection with unique names. Order is the order of
/// insertion and fixes every reduction that walks the set.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, bool trainable = true) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(value), trainable});
    return params_.back();
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw ConfigError("no parameter named '" + name + "'");
  }

  /// Total number of scalar values across all parameters.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  bool operator==(const ParameterSet& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != o.params_[i].name || params_[i].value != o.params_[i].value ||
          params_[i].trainable != o.params_[i].trainable) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradients aligned with a ParameterSet (same order). Untrainable or unused
/// parameters get zero tensors of the right shape.
template <typename T>
using Gradients = std::vector<Tensor<T>>;

template <typename T>
class Tape;

/// Handle to a node of a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const {
    assert(tape_);
    return *tape_;
  }
  NodeId id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Node ids are creation indices, so inputs always precede their consumers and
/// backward() walks ids in descending order. Gradient contributions to a node
/// therefore arrive in a fixed order, which makes results bit-reproducible.
/// A Tape is not thread-safe; use one tape per thread.
template <typename T>
class Tape {
 public:
  /// Called with the gradient of the node's output. Accumulates into the
  /// gradients of the node's inputs via Tape::grad_for.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// When set, every recorded value is scanned for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }

  Var<T> constant(Tensor<T> value) { return leaf("constant", std::move(value), false); }
  Var<T> variable(Tensor<T> value) { return leaf("variable", std::move(value), true); }

  /// Leaf node for a parameter. Repeated calls with the same parameter return
  /// the same node, so every use of a shared weight accumulates into one gradient.
  Var<T> parameter(const Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    Var<T> v = leaf("parameter", p.value, p.trainable);
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  /// Records the result of an operation. `backward` may be empty when no
  /// input requires a gradient.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    return record(op, std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
  }

  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
    bool needs = false;
    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw Error(std::string(op) + ": input belongs to a different tape");
      needs = needs || nodes_[in.id()].requires_grad;
      ids.push_back(in.id());
    }
    if (check_finite_ && !value.all_finite()) {
      throw NumericError(std::string(op) + ": produced a non-finite value");
    }
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs = std::move(ids);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::string_view op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator of `id`, zero-initialised on first use; nullptr when
  /// the node does not require a gradient.
  Tensor<T>* grad_for(NodeId id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
  }
  Tensor<T>* grad_for(const Var<T>& v) { return grad_for(v.id()); }

  bool has_grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape() && n.value.size() > 0;
  }

  /// Gradient of the last backward() loss w.r.t. `v`; zeros when unreached.
  Tensor<T> grad(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id());
    if (has_grad(v.id())) return n.grad;
    return Tensor<T>(n.value.shape());
  }

  /// Reverse sweep from a scalar loss. Replaces any previous gradients.
  void backward(const Var<T>& loss) {
    if (&loss.tape() != this) throw Error("backward: loss belongs to a different tape");
    if (loss.value().size() != 1) throw ShapeError("backward: loss must be scalar, got " + loss.shape().str());
    for (auto& n : nodes_) n.grad = Tensor<T>();
    Node& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad = Tensor<T>(root.value.shape(), T(1));
    for (NodeId i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || !has_grad(i)) continue;
      for ([[maybe_unused]] NodeId in : n.inputs) assert(in < i);
      // the callback may grow other nodes' gradients but never this one's
      const Tensor<T>& g = n.grad;
      n.backward(*this, g);
    }
  }

  /// Gradients for every parameter of `params`, in set order.
  Gradients<T> parameter_gradients(const ParameterSet<T>& params) const {
    Gradients<T> out;
    out.reserve(params.size());
    for (const auto& p : params) {
      auto it = param_nodes_.find(&p);
      if (it != param_nodes_.end() && has_grad(it->second)) {
        out.push_back(nodes_[it->second].grad);
      } else {
        out.emplace_back(p.value.shape());
      }
    }
    return out;
  }

  void clear() {
    nodes_.clear();
    param_nodes_.clear();
  }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var<T> leaf(std::string_view op, Tensor<T> value, bool requires_grad) {
    if (check_finite_ && !value.all_finite()) throw NumericError(std::string(op) + ": non-finite input value");
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, NodeId> param_nodes_;
  bool check_finite_ = true;
};

}  // namespace siamdepth
