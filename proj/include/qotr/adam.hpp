#pragma once

#include <string>
#include <vector>

#include "qotr/tensor.hpp"

namespace qotr {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled: p -= lr * wd * p

  void validate() const;
};

struct AdamSlot {
  std::string name;
  Tensor<float>* param = nullptr;
};

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::uint64_t t = 0;

  // Zero moments shaped like the slots.
  static AdamState zeros(const std::vector<AdamSlot>& slots);
};

// One update. grads[i] may be null (treated as a zero gradient). Throws
// NumericError naming the parameter if a gradient is non-finite; in that
// case nothing is modified.
void adam_step(const std::vector<AdamSlot>& slots, const std::vector<const Tensor<float>*>& grads,
               AdamState& state, const AdamConfig& cfg);

}  // namespace qotr
