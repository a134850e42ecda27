// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "c3/tensor.hpp"

namespace c3 {

/// Reverse-mode autodiff handle. A Var wraps a node in a dynamically built
/// tape; ops create new nodes whose back() routine scatters the incoming
/// gradient into the parents. Nodes with requires_grad == false carry no
/// tape edges, so inference builds no graph.
template <class T>
class Var {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated lazily by accum()
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> back;
    bool requires_grad = false;

    void accum(const Tensor<T>& g) {
      if (grad.empty()) grad = Tensor<T>::zeros(val.shape);
      const size_t n = grad.v.size();
      for (size_t i = 0; i < n; ++i) grad.v[i] += g.v[i];
    }
  };

  Var() = default;
  explicit Var(Tensor<T> t, bool requires_grad = false) : n_(std::make_shared<Node>()) {
    n_->val = std::move(t);
    n_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor<T>& val() const { return n_->val; }
  Tensor<T>& val() { return n_->val; }
  const Tensor<T>& grad() const { return n_->grad; }
  Tensor<T>& grad() { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  std::shared_ptr<Node> node() const { return n_; }

  void zero_grad() {
    if (n_) n_->grad = Tensor<T>();
  }

  /// A leaf sharing this value, cut off from the tape.
  Var detach() const { return Var(n_->val, false); }

  /// Builds a non-leaf node. parents: every Var whose gradient back() feeds.
  static Var make(Tensor<T> val, std::vector<Var> parents, std::function<void(Node&)> back) {
    Var out(std::move(val), false);
    for (const auto& p : parents)
      if (p.requires_grad()) out.n_->requires_grad = true;
    if (out.n_->requires_grad) {
      out.n_->back = std::move(back);
      for (auto& p : parents) out.n_->parents.push_back(p.n_);
    }
    return out;
  }

 private:
  std::shared_ptr<Node> n_;
};

/// Runs reverse-mode accumulation from `root`, seeding d(root)/d(root) = 1.
template <class T>
void backward(const Var<T>& root) {
  using Node = typename Var<T>::Node;
  if (!root.requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad = Tensor<T>::full(root.val().shape, T(1));
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* node = *it;
    if (node->back && !node->grad.empty()) node->back(*node);
  }
}

}  // namespace c3
