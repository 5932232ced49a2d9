#pragma once

#include <random>
#include <vector>

#include "qotr/layers.hpp"

namespace qotr {

template <typename T>
struct DecoderLayer {
  NormParams<T> norm1;
  AttentionParams<T> self_attn;
  NormParams<T> norm2;
  AttentionParams<T> cross_attn;
  NormParams<T> norm3;
  FeedForwardParams<T> ffn;
};

template <typename T>
struct DecoderParams {
  Tensor<T> pos;  // [R, D]
  std::vector<DecoderLayer<T>> layers;
  std::size_t n_heads = 1;

  static DecoderParams init(std::size_t R, std::size_t dim, std::size_t depth, std::size_t n_heads,
                            std::mt19937_64& rng);

  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;
};

// Cross-attention: queries from q [R, D], keys/values from h_enc [L, D].
template <typename T>
Var<T> mca(Var<T> q, Var<T> h_enc, const AttentionParams<T>& p, std::size_t n_heads);

// q_0 = q_expand + E'_pos, then pre-norm {self-attention, cross-attention,
// FFN} blocks. No causal mask and no trailing norm.
template <typename T>
Var<T> decode(Var<T> q_expand, Var<T> h_enc, const DecoderParams<T>& p);

}  // namespace qotr
