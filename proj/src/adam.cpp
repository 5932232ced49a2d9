#include "qotr/adam.hpp"

#include <cmath>

#include "qotr/errors.hpp"

namespace qotr {

void AdamConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("adam eps must be > 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
}

AdamState AdamState::zeros(const std::vector<AdamSlot>& slots) {
  AdamState s;
  for (const auto& slot : slots) {
    s.m.emplace_back(slot.param->shape(), 0.0f);
    s.v.emplace_back(slot.param->shape(), 0.0f);
  }
  return s;
}

void adam_step(const std::vector<AdamSlot>& slots, const std::vector<const Tensor<float>*>& grads,
               AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != slots.size() || state.m.size() != slots.size() || state.v.size() != slots.size()) {
    throw ContractError("adam_step: slots, grads and moments differ in count");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Tensor<float>* g = grads[i];
    if (state.m[i].shape() != slots[i].param->shape() || state.v[i].shape() != slots[i].param->shape()) {
      throw DimensionError("adam_step: moment shape mismatch for " + slots[i].name);
    }
    if (!g) continue;
    if (g->shape() != slots[i].param->shape()) {
      throw DimensionError("adam_step: gradient " + shape_str(g->shape()) + " for " + slots[i].name + " " +
                           shape_str(slots[i].param->shape()));
    }
    for (std::size_t k = 0; k < g->numel(); ++k) {
      if (!std::isfinite((*g)[k])) {
        throw NumericError("non-finite gradient in " + slots[i].name + " at element " + std::to_string(k));
      }
    }
  }

  state.t += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Tensor<float>& p = *slots[i].param;
    Tensor<float>& m = state.m[i];
    Tensor<float>& v = state.v[i];
    const Tensor<float>* g = grads[i];
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double gk = g ? (*g)[k] : 0.0;
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double step = cfg.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps);
      p[k] = static_cast<float>(decay * p[k] - step);
    }
  }
}

}  // namespace qotr
