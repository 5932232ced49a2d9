#include "qotr/autograd.hpp"

#include "qotr/errors.hpp"

namespace qotr {

template <typename T>
std::size_t Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

template <typename T>
std::size_t Tape<T>::record(Tensor<T> value, const std::vector<std::size_t>& inputs,
                            BackwardRule rule) {
  Node n;
  n.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw ContractError("tape input refers to a future node");
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  if (n.requires_grad) {
    n.inputs = inputs;
    n.rule = std::move(rule);
  }
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(std::size_t id) const {
  if (!nodes_[id].grad) throw ContractError("node has no gradient");
  return *nodes_[id].grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (!n.grad) n.grad.emplace(n.value.shape(), T(0));
  return *n.grad;
}

template <typename T>
void Tape<T>::backward(std::size_t root) {
  if (root >= nodes_.size()) throw ContractError("backward root not on tape");
  if (nodes_[root].value.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(nodes_[root].value.shape()));
  }
  if (!nodes_[root].requires_grad) return;
  grad_buffer(root)[0] += T(1);
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.rule || !n.grad) continue;
    n.rule(*this, i);
  }
}

template <typename T>
Var<T> Graph<T>::param(const Tensor<T>& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return Var<T>(this, it->second);
  std::size_t id = tape_.leaf(p, !is_frozen(p));
  bound_.emplace(&p, id);
  return Var<T>(this, id);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  return Var<T>(this, tape_.leaf(std::move(value), false));
}

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value, bool requires_grad) {
  return Var<T>(this, tape_.leaf(std::move(value), requires_grad));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs,
                        typename Tape<T>::BackwardRule rule) {
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (&v.graph() != this) throw ContractError("mixing vars from different graphs");
    ids.push_back(v.id());
  }
  return Var<T>(this, tape_.record(std::move(value), ids, std::move(rule)));
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (&loss.graph() != this) throw ContractError("loss belongs to another graph");
  tape_.backward(loss.id());
}

template <typename T>
const Tensor<T>* Graph<T>::grad(const Tensor<T>& p) const {
  auto it = bound_.find(&p);
  if (it == bound_.end() || !tape_.has_grad(it->second)) return nullptr;
  return &tape_.grad(it->second);
}

template <typename T>
const Tensor<T>* Graph<T>::grad(Var<T> v) const {
  if (!tape_.has_grad(v.id())) return nullptr;
  return &tape_.grad(v.id());
}

template class Tape<float>;
template class Tape<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace qotr
