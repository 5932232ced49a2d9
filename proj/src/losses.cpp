#include "qotr/losses.hpp"

#include <cmath>

#include "qotr/errors.hpp"
#include "qotr/ops.hpp"

namespace qotr {

void LossWeights::validate() const {
  if (!(lambda_rec >= 0)) throw ConfigError("lambda_rec must be >= 0");
  if (!(lambda_perceptual >= 0)) throw ConfigError("lambda_perceptual must be >= 0");
}

template <typename T>
PatchStats<T> patch_stats(const Tensor<T>& targets) {
  if (targets.rank() != 2 || targets.dim(1) == 0) {
    throw DimensionError("patch_stats expects [R, n], got " + shape_str(targets.shape()));
  }
  const std::size_t R = targets.dim(0), n = targets.dim(1);
  PatchStats<T> s;
  s.mean.resize(R);
  s.std.resize(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* row = targets.ptr() + r * n;
    double mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += row[i];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(n);
    s.mean[r] = static_cast<T>(mu);
    s.std[r] = static_cast<T>(std::sqrt(var));
  }
  return s;
}

template <typename T>
NormalizedPatches<T> per_patch_normalize(Var<T> pred, const Tensor<T>& targets) {
  if (pred.shape() != targets.shape()) {
    throw DimensionError("per_patch_normalize: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(targets.shape()));
  }
  const PatchStats<T> st = patch_stats(targets);
  const std::size_t R = targets.dim(0), n = targets.dim(1);
  Tensor<T> mu({R, 1}), inv({R, 1});
  Tensor<T> norm_t(targets.shape());
  for (std::size_t r = 0; r < R; ++r) {
    mu[r] = st.mean[r];
    inv[r] = T(1) / (st.std[r] + static_cast<T>(kPatchNormEps));
    for (std::size_t i = 0; i < n; ++i) norm_t[r * n + i] = (targets[r * n + i] - mu[r]) * inv[r];
  }
  Graph<T>& g = pred.graph();
  Var<T> norm_p = mul(sub(pred, g.constant(std::move(mu))), g.constant(std::move(inv)));
  return {norm_p, std::move(norm_t)};
}

template <typename T>
Var<T> rec_loss(Var<T> pred, const Tensor<T>& targets) {
  NormalizedPatches<T> np = per_patch_normalize(pred, targets);
  Graph<T>& g = pred.graph();
  const std::size_t R = targets.dim(0);
  Var<T> diff = sub(g.constant(std::move(np.target)), np.pred);
  return scale(sum(square(diff)), T(1) / static_cast<T>(R));
}

template <typename T>
Var<T> d_hinge_loss(const std::vector<Var<T>>& scores_fake, const std::vector<Var<T>>& scores_real) {
  if (scores_fake.size() != scores_real.size() || scores_fake.empty()) {
    throw DimensionError("d_hinge_loss: mismatched scale lists");
  }
  Var<T> total;
  for (std::size_t s = 0; s < scores_fake.size(); ++s) {
    Var<T> term = add(mean(relu(add_scalar(scores_fake[s], T(1)))),
                      mean(relu(add_scalar(scale(scores_real[s], T(-1)), T(1)))));
    total = s == 0 ? term : add(total, term);
  }
  return scale(total, T(1) / static_cast<T>(scores_fake.size()));
}

template <typename T>
Var<T> g_adv_loss(const std::vector<Var<T>>& scores_fake) {
  if (scores_fake.empty()) throw DimensionError("g_adv_loss: no scales");
  Var<T> total;
  for (std::size_t s = 0; s < scores_fake.size(); ++s) {
    Var<T> term = mean(scores_fake[s]);
    total = s == 0 ? term : add(total, term);
  }
  return scale(total, T(-1) / static_cast<T>(scores_fake.size()));
}

template <typename T>
Var<T> total_g_loss(Var<T> adv, Var<T> rec, Var<T> perc, const LossWeights& w) {
  w.validate();
  return add(add(adv, scale(rec, static_cast<T>(w.lambda_rec))),
             scale(perc, static_cast<T>(w.lambda_perceptual)));
}

#define QOTR_INSTANTIATE_LOSSES(T)                                                           \
  template PatchStats<T> patch_stats(const Tensor<T>&);                                      \
  template NormalizedPatches<T> per_patch_normalize(Var<T>, const Tensor<T>&);               \
  template Var<T> rec_loss(Var<T>, const Tensor<T>&);                                        \
  template Var<T> d_hinge_loss(const std::vector<Var<T>>&, const std::vector<Var<T>>&);      \
  template Var<T> g_adv_loss(const std::vector<Var<T>>&);                                    \
  template Var<T> total_g_loss(Var<T>, Var<T>, Var<T>, const LossWeights&);

QOTR_INSTANTIATE_LOSSES(float)
QOTR_INSTANTIATE_LOSSES(double)

}  // namespace qotr
