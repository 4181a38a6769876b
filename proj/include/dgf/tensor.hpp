#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dgf/alloc.hpp"
#include "dgf/common.hpp"
#include "dgf/thread_pool.hpp"

namespace dgf {

template <typename S>
class Tensor;

namespace detail {

inline uint64_t& seq_counter() {
  thread_local uint64_t seq = 0;
  return seq;
}

inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}

template <typename S>
struct Node {
  Shape shape;
  Vec<S> values;
  std::unique_ptr<Vec<S>> grad;  // leaves only, filled by backward()

  bool requires_grad = false;
  bool is_leaf = true;
  bool backward_done = false;
  // False when the backward rule produces terminal gradient values that
  // cannot themselves be differentiated (e.g. fused sampling kernels).
  bool grad_graph_ok = true;

  uint64_t seq = 0;
  std::vector<Tensor<S>> parents;
  std::function<std::vector<Tensor<S>>(const Tensor<S>&)> backward_fn;
};

}  // namespace detail

/// Suspends graph recording; ops created inside compute values only.
class NoGradScope {
 public:
  NoGradScope() { ++detail::no_grad_depth(); }
  ~NoGradScope() { --detail::no_grad_depth(); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth() == 0; }

/// Dense N-dimensional array with value semantics over a shared node.
/// 4-D data uses (batch, channels, height, width) layout, contiguous
/// row-major. Ops are free functions that record backward rules on a
/// per-thread tape ordered by node creation.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }

  static Tensor full(Shape shape, S value) {
    auto n = std::make_shared<detail::Node<S>>();
    const int64_t count = numel_of(shape);
    n->shape = std::move(shape);
    n->values.assign(static_cast<size_t>(count), value);
    n->seq = ++detail::seq_counter();
    return Tensor(std::move(n));
  }

  static Tensor from_values(Shape shape, Vec<S> values) {
    if (static_cast<int64_t>(values.size()) != numel_of(shape))
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node<S>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->seq = ++detail::seq_counter();
    return Tensor(std::move(n));
  }

  /// Leaf that participates in gradient computation; an empty value list
  /// zero-fills.
  static Tensor param(Shape shape, Vec<S> values) {
    if (values.empty() && numel_of(shape) != 0)
      values.assign(static_cast<size_t>(numel_of(shape)), S(0));
    Tensor t = from_values(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  size_t rank() const { return node_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }

  const Vec<S>& values() const { return node_->values; }
  const S* data() const { return node_->values.data(); }

  /// Raw write access; meaningful for leaves before they enter a graph.
  Vec<S>& mutable_values() { return node_->values; }
  S* data_mut() { return node_->values.data(); }

  S scalar() const {
    if (numel() != 1) throw UsageError("scalar() on tensor of shape " + shape_str(shape()));
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool v) {
    if (!node_->is_leaf) throw UsageError("requires_grad may only be toggled on leaf tensors");
    node_->requires_grad = v;
  }

  bool is_leaf() const { return node_->is_leaf; }

  /// Gradient buffer populated by backward(); null until then.
  const Vec<S>* grad() const { return node_->grad.get(); }

  void zero_grad() {
    if (node_->grad) std::fill(node_->grad->begin(), node_->grad->end(), S(0));
  }

  void clear_grad() { node_->grad.reset(); }

  bool all_finite() const {
    for (S v : node_->values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  /// Value copy detached from the graph.
  Tensor detach() const { return from_values(shape(), values()); }

  template <typename T>
  Tensor<T> cast() const {
    Vec<T> out(values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(values()[i]);
    return Tensor<T>::from_values(shape(), std::move(out));
  }

  detail::Node<S>* node() const { return node_.get(); }

  /// Graph-op factory: value tensor wired to its inputs with a backward
  /// rule mapping the output gradient to per-parent gradients (an
  /// undefined Tensor in the result skips that parent).
  static Tensor make_op(Shape shape, Vec<S> values, std::vector<Tensor> parents,
                        std::function<std::vector<Tensor>(const Tensor&)> backward_fn,
                        bool grad_graph_ok = true) {
    Tensor t = from_values(std::move(shape), std::move(values));
#ifndef NDEBUG
    // Finite inputs must yield finite outputs through every forward op.
    if (!t.all_finite()) {
      bool inputs_finite = true;
      for (const auto& p : parents)
        if (p.defined() && !p.all_finite()) inputs_finite = false;
      if (inputs_finite) throw UsageError("op produced non-finite values from finite inputs");
    }
#endif
    if (!grad_enabled()) return t;
    bool needs = false;
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) needs = true;
    if (!needs) return t;
    t.node_->requires_grad = true;
    t.node_->is_leaf = false;
    t.node_->parents = std::move(parents);
    t.node_->backward_fn = std::move(backward_fn);
    t.node_->grad_graph_ok = grad_graph_ok;
    return t;
  }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<S>> n) : node_(std::move(n)) {}

  std::shared_ptr<detail::Node<S>> node_;
};

namespace detail {

template <typename S>
Tensor<S> grad_accumulate(const Tensor<S>& a, const Tensor<S>& b, bool create_graph) {
  Vec<S> out(a.values());
  const S* bv = b.data();
  const int64_t n = static_cast<int64_t>(out.size());
  constexpr int64_t kChunk = 1 << 16;
  if (n <= kChunk) {
    for (int64_t i = 0; i < n; ++i) out[i] += bv[i];
  } else {
    const int64_t chunks = (n + kChunk - 1) / kChunk;
    ThreadPool::global().parallel_for(chunks, [&](int64_t c) {
      const int64_t hi = std::min(n, (c + 1) * kChunk);
      for (int64_t i = c * kChunk; i < hi; ++i) out[i] += bv[i];
    });
  }
  if (!create_graph) return Tensor<S>::from_values(a.shape(), std::move(out));
  return Tensor<S>::make_op(a.shape(), std::move(out), {a, b}, [](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{g, g};
  });
}

// Reverse sweep shared by backward() and grad_of(). Visits nodes reachable
// from `loss` through grad-requiring parents in reverse creation order.
template <typename S>
void reverse_sweep(const Tensor<S>& loss, bool create_graph, bool consume_tape,
                   std::unordered_map<Node<S>*, Tensor<S>>* out_grads,
                   const std::unordered_set<Node<S>*>* keep) {
  if (loss.numel() != 1)
    throw UsageError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw UsageError("backward on a tensor that does not require gradients");

  // Collect the reachable subgraph; handles keep the nodes alive.
  std::vector<Node<S>*> order;
  std::unordered_map<Node<S>*, Tensor<S>> holders;
  {
    std::vector<Tensor<S>> stack{loss};
    while (!stack.empty()) {
      Tensor<S> t = stack.back();
      stack.pop_back();
      Node<S>* n = t.node();
      if (!n->requires_grad || holders.count(n)) continue;
      holders.emplace(n, t);
      order.push_back(n);
      for (const auto& p : n->parents)
        if (p.defined() && p.requires_grad()) stack.push_back(p);
    }
  }
  std::sort(order.begin(), order.end(), [](Node<S>* a, Node<S>* b) { return a->seq > b->seq; });

  std::unordered_map<Node<S>*, Tensor<S>> grads;
  grads.emplace(loss.node(), Tensor<S>::full(loss.shape(), S(1)));

  for (Node<S>* n : order) {
    auto it = grads.find(n);
    if (it == grads.end()) continue;  // reachable by topology but not by value flow
    Tensor<S> g = it->second;
    grads.erase(it);

    const bool requested = out_grads && keep && keep->count(n);
    if (requested) out_grads->emplace(n, g);

    if (n->is_leaf) {
      if (consume_tape) {
        if (!n->grad) n->grad = std::make_unique<Vec<S>>(n->values.size(), S(0));
        const auto& gv = g.values();
        for (size_t i = 0; i < gv.size(); ++i) (*n->grad)[i] += gv[i];
      }
      continue;
    }

    if (consume_tape) {
      if (n->backward_done)
        throw UsageError("second backward pass over an already-consumed graph; re-run forward first");
      n->backward_done = true;
    }
    if (create_graph && !n->grad_graph_ok)
      throw UsageError("cannot build a gradient graph through this op: its backward rule is terminal");

    std::vector<Tensor<S>> contribs;
    if (create_graph) {
      contribs = n->backward_fn(g);
    } else {
      NoGradScope ng;  // gradient values only; no second-order graph
      contribs = n->backward_fn(g);
    }
    if (contribs.size() != n->parents.size())
      throw UsageError("backward rule produced a gradient count mismatching its inputs");

    for (size_t i = 0; i < contribs.size(); ++i) {
      const Tensor<S>& p = n->parents[i];
      if (!p.defined() || !p.requires_grad() || !contribs[i].defined()) continue;
      if (contribs[i].shape() != p.shape())
        throw UsageError("backward rule produced gradient of shape " + shape_str(contribs[i].shape()) +
                         " for input of shape " + shape_str(p.shape()));
      auto pit = grads.find(p.node());
      if (pit == grads.end()) {
        grads.emplace(p.node(), contribs[i]);
      } else {
        pit->second = grad_accumulate(pit->second, contribs[i], create_graph);
      }
    }
  }
}

}  // namespace detail

/// Populates .grad on every grad-requiring leaf reachable from the scalar
/// loss, accumulating additively. A graph can be swept this way once.
template <typename S>
void backward(const Tensor<S>& loss) {
  detail::reverse_sweep<S>(loss, /*create_graph=*/false, /*consume_tape=*/true, nullptr, nullptr);
}

/// Returns d(loss)/d(input) for each requested input as graph tensors.
/// With create_graph the results are differentiable further (used for
/// gradient penalties); the swept graph is left reusable by backward().
template <typename S>
std::vector<Tensor<S>> grad_of(const Tensor<S>& loss, const std::vector<Tensor<S>>& inputs,
                               bool create_graph) {
  std::unordered_set<detail::Node<S>*> keep;
  for (const auto& t : inputs) keep.insert(t.node());
  std::unordered_map<detail::Node<S>*, Tensor<S>> grads;
  detail::reverse_sweep<S>(loss, create_graph, /*consume_tape=*/false, &grads, &keep);
  std::vector<Tensor<S>> out;
  out.reserve(inputs.size());
  for (const auto& t : inputs) {
    auto it = grads.find(t.node());
    if (it == grads.end())
      throw UsageError("requested gradient for a tensor the loss does not depend on");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace dgf
