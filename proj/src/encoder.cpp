#include "qotr/encoder.hpp"

#include "qotr/errors.hpp"
#include "qotr/ops.hpp"

namespace qotr {

template <typename T>
EncoderParams<T> EncoderParams<T>::init(std::size_t token_width, std::size_t L, std::size_t dim,
                                        std::size_t depth, std::size_t n_heads,
                                        std::mt19937_64& rng) {
  if (n_heads == 0 || dim % n_heads != 0) {
    throw ConfigError("encoder width D=" + std::to_string(dim) + " is not divisible by n_heads=" +
                      std::to_string(n_heads));
  }
  EncoderParams p;
  p.n_heads = n_heads;
  p.embed = truncated_normal<T>({token_width, dim}, kInitStd, rng);
  p.pos = truncated_normal<T>({L, dim}, kInitStd, rng);
  for (std::size_t i = 0; i < depth; ++i) {
    EncoderLayer<T> layer;
    layer.norm1 = NormParams<T>::init(dim);
    layer.attn = AttentionParams<T>::init(dim, rng);
    layer.norm2 = NormParams<T>::init(dim);
    layer.ffn = FeedForwardParams<T>::init(dim, rng);
    p.layers.push_back(std::move(layer));
  }
  p.final_norm = NormParams<T>::init(dim);
  return p;
}

template <typename T>
void EncoderParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "embed", embed);
  f(prefix + "pos", pos);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = prefix + "layers." + std::to_string(i) + ".";
    layers[i].norm1.visit(lp + "norm1.", f);
    layers[i].attn.visit(lp + "attn.", f);
    layers[i].norm2.visit(lp + "norm2.", f);
    layers[i].ffn.visit(lp + "ffn.", f);
  }
  final_norm.visit(prefix + "final_norm.", f);
}

template <typename T>
void EncoderParams<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  f(prefix + "embed", embed);
  f(prefix + "pos", pos);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = prefix + "layers." + std::to_string(i) + ".";
    layers[i].norm1.visit(lp + "norm1.", f);
    layers[i].attn.visit(lp + "attn.", f);
    layers[i].norm2.visit(lp + "norm2.", f);
    layers[i].ffn.visit(lp + "ffn.", f);
  }
  final_norm.visit(prefix + "final_norm.", f);
}

template <typename T>
Var<T> patch_embed(Var<T> tokens, const EncoderParams<T>& p) {
  Graph<T>& g = tokens.graph();
  if (tokens.value().rank() != 2 || tokens.dim(1) != p.embed.dim(0)) {
    throw DimensionError("patch_embed: tokens " + shape_str(tokens.shape()) + " for embedding " +
                         shape_str(p.embed.shape()));
  }
  if (tokens.dim(0) != p.pos.dim(0)) {
    throw DimensionError("patch_embed: " + std::to_string(tokens.dim(0)) +
                         " tokens but positional table has " + std::to_string(p.pos.dim(0)) + " rows");
  }
  return add(matmul(tokens, g.param(p.embed)), g.param(p.pos));
}

template <typename T>
Var<T> msa(Var<T> x, const AttentionParams<T>& p, std::size_t n_heads) {
  return multi_head_attention(x, x, p, n_heads);
}

template <typename T>
Var<T> encode(Var<T> tokens, const EncoderParams<T>& p) {
  Var<T> h = patch_embed(tokens, p);
  for (const auto& layer : p.layers) {
    Var<T> h1 = add(msa(apply_norm(h, layer.norm1), layer.attn, p.n_heads), h);
    h = add(feed_forward(apply_norm(h1, layer.norm2), layer.ffn), h1);
  }
  return apply_norm(h, p.final_norm);
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template Var<float> patch_embed(Var<float>, const EncoderParams<float>&);
template Var<double> patch_embed(Var<double>, const EncoderParams<double>&);
template Var<float> msa(Var<float>, const AttentionParams<float>&, std::size_t);
template Var<double> msa(Var<double>, const AttentionParams<double>&, std::size_t);
template Var<float> encode(Var<float>, const EncoderParams<float>&);
template Var<double> encode(Var<double>, const EncoderParams<double>&);

}  // namespace qotr
