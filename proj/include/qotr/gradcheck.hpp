#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qotr/autograd.hpp"

namespace qotr {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param #>[<flat index>]" of the worst element
  std::size_t checked = 0;
};

// A scalar function of the given tensors. It must bind each of them through
// Graph::param so their gradients can be read back by address, and it must
// be deterministic (re-seed any RNG inside).
using ScalarFn = std::function<Var<double>(Graph<double>&)>;

struct GradCheckOptions {
  double h = 1e-5;
  // Check at most this many randomly chosen elements per tensor (0 = all).
  std::size_t max_elements_per_tensor = 0;
  std::uint64_t seed = 0;
};

// Compares backward() against central differences (f(p+h) - f(p-h)) / 2h
// element-wise and reports max |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>*>& tensors,
                           const GradCheckOptions& opts = {});

}  // namespace qotr
