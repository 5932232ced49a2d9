#pragma once

#include <random>
#include <string>
#include <vector>

#include "qotr/geometry.hpp"
#include "qotr/layers.hpp"

namespace qotr {

enum class NoiseDistribution { kNormal, kUniform };

NoiseDistribution parse_noise_distribution(const std::string& name);
std::string to_string(NoiseDistribution d);

struct NoiseSpec {
  std::size_t noise_dim = 16;
  // kUniform draws from U(-1, 1).
  NoiseDistribution distribution = NoiseDistribution::kNormal;
};

// One residual block of the expansion network:
//   y = LN(x); off = conv3x3(y); d = GELU(deform3x3(y, off));
//   out = x + conv1x1(LN(d))
// Norms act over channels at each spatial location.
template <typename T>
struct QEMBlock {
  NormParams<T> norm1;
  Tensor<T> offset_w, offset_b;  // [2*9, D, 3, 3], [2*9]
  Tensor<T> deform_w, deform_b;  // [D, D, 3, 3], [D]
  NormParams<T> norm2;
  Tensor<T> point_w, point_b;    // [D, D, 1, 1], [D]
};

template <typename T>
struct QEMParams {
  // Two-layer perceptron noise_dim -> D -> D shared by every padded cell.
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  std::vector<QEMBlock<T>> blocks;
  NormParams<T> out_norm;
  Tensor<T> out_w, out_b;

  static QEMParams init(std::size_t dim, std::size_t n_blocks, std::size_t noise_dim,
                        std::mt19937_64& rng);

  std::size_t dim() const { return out_w.dim(0); }
  std::size_t noise_dim() const { return mlp_w1.dim(0); }
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;
};

// [L, D] -> [D, H/P, W/P] (token i at row i / (W/P), column i % (W/P)).
template <typename T>
Var<T> tokens_to_map(Var<T> h_enc, const GridSpec& spec);

// [D, h, w] -> [h*w, D].
template <typename T>
Var<T> map_to_tokens(Var<T> fmap);

// R x noise_dim draws, one row per ring cell in ring order.
template <typename T>
Tensor<T> sample_noise(std::size_t rows, const NoiseSpec& noise, std::mt19937_64& rng);

// Embeds fmap in the center of a (H+2M)/P x (W+2M)/P map and fills each
// ring cell with the perceptron applied to a fresh noise vector.
template <typename T>
Var<T> noise_pad(Var<T> fmap, const GridSpec& spec, const QEMParams<T>& p,
                 const NoiseSpec& noise, std::mt19937_64& rng);

template <typename T>
Var<T> qem_block(Var<T> x, const QEMBlock<T>& b);

// q_expand [R, D] in ring order.
template <typename T>
Var<T> expand_queries(Var<T> h_enc, const GridSpec& spec, const QEMParams<T>& p,
                      const NoiseSpec& noise, std::mt19937_64& rng);

}  // namespace qotr
