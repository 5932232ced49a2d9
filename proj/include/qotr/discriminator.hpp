#pragma once

#include <cstdint>
#include <vector>

#include "qotr/autograd.hpp"
#include "qotr/params.hpp"

namespace qotr {

struct DiscriminatorConfig {
  std::size_t n_scales = 2;
  std::size_t channels = 16;  // width of the first conv, doubled per layer
  std::size_t layers = 2;     // strided 4x4 layers
};

// Power-iteration state for one weight: w is viewed as [out, rest].
template <typename T>
struct SpectralNorm {
  Tensor<T> weight;  // normalized weight w / sigma
  T sigma = 0;       // u^T W v
  Tensor<T> v;
};

// Runs n_iter steps of v <- W^T u / |W^T u|, u <- W v / |W v| (updating u
// in place) and returns w / sigma with sigma = u^T W v.
template <typename T>
SpectralNorm<T> spectral_normalize(const Tensor<T>& w, Tensor<T>& u, std::size_t n_iter);

template <typename T>
struct SNConv {
  Tensor<T> w;  // [O, C, 4, 4]
  Tensor<T> b;
  Tensor<T> u;  // [O], persists across steps
  std::size_t stride = 1;
  std::size_t pad = 2;
};

// Multi-scale PatchGAN: scale s sees the image average-pooled s times.
template <typename T>
struct DiscriminatorParams {
  std::vector<std::vector<SNConv<T>>> scales;

  static DiscriminatorParams init(const DiscriminatorConfig& cfg, std::uint64_t seed);

  std::size_t n_scales() const { return scales.size(); }
  // Smallest image side every scale can still see in full.
  std::size_t receptive_field() const;

  // Trainable weights only (w and b).
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;
  // The persistent u vectors.
  void visit_state(const std::string& prefix, const ParamVisitor<T>& f);
  void visit_state(const std::string& prefix, const ConstParamVisitor<T>& f) const;
};

// One power-iteration round for every conv weight (mutates the u vectors).
template <typename T>
void update_spectral_state(DiscriminatorParams<T>& p, std::size_t n_iter = 1);

// Score maps, one [1, 1, h_s, w_s] per scale. Uses the stored u vectors
// without modifying them; sigma stays differentiable in w.
template <typename T>
std::vector<Var<T>> d_forward(Var<T> img, const DiscriminatorParams<T>& p);

}  // namespace qotr
