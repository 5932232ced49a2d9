#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "qotr/tensor.hpp"

namespace qotr {

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order of the graph; backward walks them once, in reverse.
template <typename T>
class Tape {
 public:
  // Called during backward with the tape and the node's own id. The rule
  // reads grad(self) and accumulates into its inputs' gradient buffers.
  using BackwardRule = std::function<void(Tape&, std::size_t self)>;

  std::size_t leaf(Tensor<T> value, bool requires_grad);
  std::size_t record(Tensor<T> value, const std::vector<std::size_t>& inputs,
                     BackwardRule rule);

  std::size_t size() const { return nodes_.size(); }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  bool has_grad(std::size_t id) const { return nodes_[id].grad.has_value(); }
  const Tensor<T>& grad(std::size_t id) const;
  // Zero-initialized on first use; no-op target for nodes that do not
  // require grad is the caller's responsibility to skip.
  Tensor<T>& grad_buffer(std::size_t id);

  // Seeds d(root)/d(root) = 1 and runs every backward rule in reverse
  // order. Root must hold exactly one element.
  void backward(std::size_t root);

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    std::optional<Tensor<T>> grad;
  };
  std::vector<Node> nodes_;
};

template <typename T>
class Graph;

// Handle to a tape node. Cheap to copy; valid while its Graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

// One forward/backward pass: a tape plus the binding of long-lived
// parameter tensors to tape leaves. Parameters are bound by address, once
// per graph, so a weight used by several layers (or batch items) gets its
// fan-out gradients summed in a single buffer.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> param(const Tensor<T>& p);
  Var<T> constant(Tensor<T> value);
  Var<T> input(Tensor<T> value, bool requires_grad);

  // Parameters registered here bind as constants (no gradient).
  void freeze(const Tensor<T>& p) { frozen_.insert(&p); }
  bool is_frozen(const Tensor<T>& p) const { return frozen_.count(&p) != 0; }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs,
                typename Tape<T>::BackwardRule rule);

  void backward(Var<T> loss);

  // Gradient of a bound parameter; nullptr when the parameter was never
  // used or received no gradient.
  const Tensor<T>* grad(const Tensor<T>& p) const;
  const Tensor<T>* grad(Var<T> v) const;

  Tape<T>& tape() { return tape_; }
  const Tape<T>& tape() const { return tape_; }

  // Optional hook receiving every attention probability matrix computed on
  // this graph.
  using AttentionObserver = std::function<void(const Tensor<T>&)>;
  void set_attention_observer(AttentionObserver obs) { observer_ = std::move(obs); }
  void observe_attention(const Tensor<T>& probs) const {
    if (observer_) observer_(probs);
  }

 private:
  Tape<T> tape_;
  std::unordered_map<const Tensor<T>*, std::size_t> bound_;
  std::unordered_set<const Tensor<T>*> frozen_;
  AttentionObserver observer_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->tape().value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return graph_->tape().requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace qotr
