#pragma once

#include <random>
#include <string>

#include "qotr/autograd.hpp"
#include "qotr/params.hpp"

namespace qotr {

// Weight std for freshly initialized transformer weights (ViT convention).
inline constexpr double kInitStd = 0.02;

template <typename T>
struct NormParams {
  Tensor<T> gamma;
  Tensor<T> beta;

  static NormParams init(std::size_t dim);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;
};

// Weights are stored input-major (x * W), so W_q is [D, D].
template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams init(std::size_t dim, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;
};

template <typename T>
struct FeedForwardParams {
  Tensor<T> w1, b1, w2, b2;

  // Hidden width is 4 * dim.
  static FeedForwardParams init(std::size_t dim, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;
};

template <typename T>
Var<T> apply_norm(Var<T> x, const NormParams<T>& p);

// softmax(q k^T / sqrt(d_h)) v for one head; q [Lq, d_h], k/v [Lk, d_h].
// The probability matrix is reported to the graph's attention observer.
template <typename T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v);

// A single head with its own projections: Q = x Wq, K = y Wk, V = y Wv.
template <typename T>
Var<T> attention_head(Var<T> x, Var<T> y, Var<T> wq, Var<T> wk, Var<T> wv);

// Multi-head attention with queries from x and keys/values from y,
// followed by the output projection. Head h uses columns
// [h * d_h, (h + 1) * d_h) of the fused Q/K/V projections.
template <typename T>
Var<T> multi_head_attention(Var<T> x, Var<T> y, const AttentionParams<T>& p, std::size_t n_heads);

template <typename T>
Var<T> feed_forward(Var<T> x, const FeedForwardParams<T>& p);

}  // namespace qotr
