#pragma once

#include <random>
#include <vector>

#include "qotr/layers.hpp"

namespace qotr {

template <typename T>
struct EncoderLayer {
  NormParams<T> norm1;
  AttentionParams<T> attn;
  NormParams<T> norm2;
  FeedForwardParams<T> ffn;
};

// Patch embedding E [3P^2, D], learned positions E_pos [L, D], N pre-norm
// blocks and a final layer norm.
template <typename T>
struct EncoderParams {
  Tensor<T> embed;
  Tensor<T> pos;
  std::vector<EncoderLayer<T>> layers;
  NormParams<T> final_norm;
  std::size_t n_heads = 1;

  static EncoderParams init(std::size_t token_width, std::size_t L, std::size_t dim,
                            std::size_t depth, std::size_t n_heads, std::mt19937_64& rng);

  std::size_t dim() const { return embed.dim(1); }
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;
};

// h0 = tokens * E + E_pos.
template <typename T>
Var<T> patch_embed(Var<T> tokens, const EncoderParams<T>& p);

// Self-attention over x.
template <typename T>
Var<T> msa(Var<T> x, const AttentionParams<T>& p, std::size_t n_heads);

// h_enc for tokens [L, 3P^2].
template <typename T>
Var<T> encode(Var<T> tokens, const EncoderParams<T>& p);

}  // namespace qotr
