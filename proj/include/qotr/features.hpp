#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "qotr/autograd.hpp"
#include "qotr/params.hpp"

namespace qotr {

// Frozen five-stage convolutional pyramid used by the perceptual loss.
// Stage j runs at 1/2^j of the input resolution: stage 0 is a 3x3 conv +
// ReLU on the image, later stages first 2x2-average-pool.
//
// Weights come from a fixed seed (He-normal); real pretrained weights can be
// installed through visit() by the checkpoint loader.
template <typename T>
class FeatureExtractor {
 public:
  static constexpr std::size_t kStages = 5;
  static constexpr std::array<std::size_t, kStages> kDefaultChannels = {8, 16, 32, 32, 32};

  explicit FeatureExtractor(std::uint64_t seed = 19,
                            std::array<std::size_t, kStages> channels = kDefaultChannels);

  // img is [3, H, W]; returns one [1, C_j, H/2^j, W/2^j] map per stage.
  std::vector<Var<T>> features(Var<T> img) const;

  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;

 private:
  struct Stage {
    Tensor<T> w, b;
  };
  std::vector<Stage> stages_;
};

// Stage weights ordered shallowest (largest map) to deepest.
inline constexpr std::array<double, 5> kPerceptualStageWeights = {1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0};

// (1/5) sum_j w_j * mean((phi_j(x_hat) - phi_j(y))^2).
template <typename T>
Var<T> perceptual_loss(Var<T> x_hat, Var<T> y, const FeatureExtractor<T>& phi);

}  // namespace qotr
