// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sentfuse/tensor.hpp"

namespace sentfuse {

// Reverse-mode autodiff over Tensor<S>. Every op builds an implicit acyclic
// graph of Nodes; backward() walks it once in reverse topological order.
// Interior nodes are consumed by backward; leaves (parameters, inputs)
// persist across forward passes.

template <class S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;  // allocated on first accumulation
  bool has_grad = false;
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  void accumulate(const Tensor<S>& g) {
    if (!has_grad) {
      grad = Tensor<S>::zeros(value.shape());
      has_grad = true;
    }
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }

  void zero_grad() {
    grad = Tensor<S>::zeros(value.shape());
    has_grad = true;
  }
};

template <class S>
class Var {
 public:
  Var() = default;

  explicit Var(Tensor<S> value, bool requires_grad = false)
      : n_(std::make_shared<Node<S>>()) {
    detail::require_finite(value, "var");
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
  }

  bool defined() const { return n_ != nullptr; }
  const Tensor<S>& value() const { return n_->value; }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  // Zero tensor if no gradient has been accumulated yet.
  const Tensor<S>& grad() const {
    if (!n_->has_grad) n_->zero_grad();
    return n_->grad;
  }

  void zero_grad() { n_->zero_grad(); }

  // Direct write access for optimizers; leaves only.
  Tensor<S>& mutable_value() { return n_->value; }

  const std::shared_ptr<Node<S>>& node() const { return n_; }

 private:
  std::shared_ptr<Node<S>> n_;
};

namespace detail {

// Marks an op result and wires its backward closure.
template <class S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> inputs,
               std::function<void(Node<S>*)> backward, const char* op) {
  require_finite(value, op);
  bool need = false;
  for (const auto& v : inputs) need = need || v.requires_grad();
  Var<S> out(std::move(value), need);
  if (need) {
    Node<S>* self = out.node().get();
    self->is_leaf = false;
    for (const auto& v : inputs) self->parents.push_back(v.node());
    self->backward_fn = [self, backward]() { backward(self); };
  }
  return out;
}

}  // namespace detail

// Propagates d(loss)/d(node) into every reachable node that requires grad.
// loss must be scalar. Interior nodes are single-use: a second backward
// through the same graph raises GraphError.
template <class S>
void backward(const Var<S>& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + loss.value().shape_str());
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS for the topological order.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<S>* n : order) {
    if (!n->is_leaf && n->consumed) {
      throw GraphError("backward: graph already consumed; rebuild the forward pass");
    }
  }

  loss.node()->accumulate(Tensor<S>::scalar(S(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->is_leaf) continue;
    n->backward_fn();
    n->consumed = true;
    n->backward_fn = nullptr;  // release saved intermediates
  }
}

// A named leaf with requires_grad set; the unit the optimizer steps.
template <class S>
struct Parameter {
  std::string name;
  Var<S> var;
};

// Ordered parameter tree. Registration order is the canonical order for
// initialization, optimizer state, and serialization.
template <class S>
class ParamStore {
 public:
  Var<S> add(const std::string& name, Tensor<S> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    Var<S> v(std::move(init), /*requires_grad=*/true);
    index_[name] = params_.size();
    params_.push_back({name, v});
    return v;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Var<S> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return params_[it->second].var;
  }

  std::vector<Parameter<S>>& all() { return params_; }
  const std::vector<Parameter<S>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

 private:
  std::vector<Parameter<S>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace sentfuse
