#include "qotr/features.hpp"

#include <cmath>
#include <random>

#include "qotr/errors.hpp"
#include "qotr/ops.hpp"

namespace qotr {

template <typename T>
FeatureExtractor<T>::FeatureExtractor(std::uint64_t seed, std::array<std::size_t, kStages> channels) {
  std::mt19937_64 rng(seed);
  std::size_t in = 3;
  for (std::size_t c : channels) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in * 9)));
    Stage s{Tensor<T>({c, in, 3, 3}), Tensor<T>({c})};
    for (auto& v : s.w.data()) v = static_cast<T>(dist(rng));
    stages_.push_back(std::move(s));
    in = c;
  }
}

template <typename T>
std::vector<Var<T>> FeatureExtractor<T>::features(Var<T> img) const {
  if (img.value().rank() != 3 || img.dim(0) != 3) {
    throw DimensionError("features expects a [3,H,W] image, got " + shape_str(img.shape()));
  }
  Graph<T>& g = img.graph();
  std::vector<Var<T>> out;
  Var<T> x = reshape(img, {1, 3, img.dim(1), img.dim(2)});
  for (std::size_t j = 0; j < stages_.size(); ++j) {
    if (j > 0) x = avg_pool2(x);
    g.freeze(stages_[j].w);
    g.freeze(stages_[j].b);
    x = relu(conv2d(x, g.param(stages_[j].w), g.param(stages_[j].b), 1, 1));
    out.push_back(x);
  }
  return out;
}

template <typename T>
void FeatureExtractor<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t j = 0; j < stages_.size(); ++j) {
    f(prefix + "stages." + std::to_string(j) + ".w", stages_[j].w);
    f(prefix + "stages." + std::to_string(j) + ".b", stages_[j].b);
  }
}

template <typename T>
void FeatureExtractor<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  for (std::size_t j = 0; j < stages_.size(); ++j) {
    f(prefix + "stages." + std::to_string(j) + ".w", stages_[j].w);
    f(prefix + "stages." + std::to_string(j) + ".b", stages_[j].b);
  }
}

template <typename T>
Var<T> perceptual_loss(Var<T> x_hat, Var<T> y, const FeatureExtractor<T>& phi) {
  if (x_hat.shape() != y.shape()) {
    throw DimensionError("perceptual_loss: " + shape_str(x_hat.shape()) + " vs " + shape_str(y.shape()));
  }
  const auto fa = phi.features(x_hat);
  const auto fb = phi.features(y);
  Var<T> total;
  for (std::size_t j = 0; j < fa.size(); ++j) {
    Var<T> term = scale(mean(square(sub(fa[j], fb[j]))), static_cast<T>(kPerceptualStageWeights[j]));
    total = j == 0 ? term : add(total, term);
  }
  return scale(total, T(1) / static_cast<T>(fa.size()));
}

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;
template Var<float> perceptual_loss(Var<float>, Var<float>, const FeatureExtractor<float>&);
template Var<double> perceptual_loss(Var<double>, Var<double>, const FeatureExtractor<double>&);

}  // namespace qotr
