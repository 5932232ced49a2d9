#pragma once

#include <vector>

#include "qotr/autograd.hpp"

namespace qotr {

struct LossWeights {
  double lambda_rec = 5.0;
  double lambda_perceptual = 10.0;

  void validate() const;
};

inline constexpr double kPatchNormEps = 1e-6;

// Per-row mean and (population) standard deviation of target patches.
template <typename T>
struct PatchStats {
  std::vector<T> mean;
  std::vector<T> std;
};

template <typename T>
PatchStats<T> patch_stats(const Tensor<T>& targets);

template <typename T>
struct NormalizedPatches {
  Var<T> pred;
  Tensor<T> target;
};

// Both operands of row i are mapped v -> (v - mu_i) / (sigma_i + eps) with
// mu_i, sigma_i taken from target row i.
template <typename T>
NormalizedPatches<T> per_patch_normalize(Var<T> pred, const Tensor<T>& targets);

// (1/R) sum_i || norm(target_i) - norm(pred_i) ||^2.
template <typename T>
Var<T> rec_loss(Var<T> pred, const Tensor<T>& targets);

// max(0, 1 + D(fake)) + max(0, 1 - D(real)), each averaged over map
// elements, then averaged over scales.
template <typename T>
Var<T> d_hinge_loss(const std::vector<Var<T>>& scores_fake, const std::vector<Var<T>>& scores_real);

// -mean D(fake) over map elements, averaged over scales.
template <typename T>
Var<T> g_adv_loss(const std::vector<Var<T>>& scores_fake);

template <typename T>
Var<T> total_g_loss(Var<T> adv, Var<T> rec, Var<T> perc, const LossWeights& w);

}  // namespace qotr
