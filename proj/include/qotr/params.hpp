#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "qotr/tensor.hpp"

namespace qotr {

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& value)>;
template <typename T>
using ConstParamVisitor = std::function<void(const std::string& name, const Tensor<T>& value)>;

// Normal(0, std) resampled outside +-2 std.
template <typename T>
Tensor<T> truncated_normal(Shape shape, double std, std::mt19937_64& rng);

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng);

// Collects pointers to every tensor reachable through a visit() method, in
// visit order.
template <typename T, typename Params>
std::vector<Tensor<T>*> param_pointers(Params& params) {
  std::vector<Tensor<T>*> out;
  params.visit("", [&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T, typename Params>
std::size_t param_count(const Params& params) {
  std::size_t n = 0;
  params.visit("", ConstParamVisitor<T>([&](const std::string&, const Tensor<T>& t) { n += t.numel(); }));
  return n;
}

}  // namespace qotr
