#include "qotr/decoder.hpp"

#include "qotr/encoder.hpp"
#include "qotr/errors.hpp"
#include "qotr/ops.hpp"

namespace qotr {

template <typename T>
DecoderParams<T> DecoderParams<T>::init(std::size_t R, std::size_t dim, std::size_t depth,
                                        std::size_t n_heads, std::mt19937_64& rng) {
  if (n_heads == 0 || dim % n_heads != 0) {
    throw ConfigError("decoder width D=" + std::to_string(dim) + " is not divisible by n_heads=" +
                      std::to_string(n_heads));
  }
  DecoderParams p;
  p.n_heads = n_heads;
  p.pos = truncated_normal<T>({R, dim}, kInitStd, rng);
  for (std::size_t i = 0; i < depth; ++i) {
    DecoderLayer<T> l;
    l.norm1 = NormParams<T>::init(dim);
    l.self_attn = AttentionParams<T>::init(dim, rng);
    l.norm2 = NormParams<T>::init(dim);
    l.cross_attn = AttentionParams<T>::init(dim, rng);
    l.norm3 = NormParams<T>::init(dim);
    l.ffn = FeedForwardParams<T>::init(dim, rng);
    p.layers.push_back(std::move(l));
  }
  return p;
}

template <typename T>
void DecoderParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "pos", pos);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = prefix + "layers." + std::to_string(i) + ".";
    layers[i].norm1.visit(lp + "norm1.", f);
    layers[i].self_attn.visit(lp + "self_attn.", f);
    layers[i].norm2.visit(lp + "norm2.", f);
    layers[i].cross_attn.visit(lp + "cross_attn.", f);
    layers[i].norm3.visit(lp + "norm3.", f);
    layers[i].ffn.visit(lp + "ffn.", f);
  }
}

template <typename T>
void DecoderParams<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  f(prefix + "pos", pos);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = prefix + "layers." + std::to_string(i) + ".";
    layers[i].norm1.visit(lp + "norm1.", f);
    layers[i].self_attn.visit(lp + "self_attn.", f);
    layers[i].norm2.visit(lp + "norm2.", f);
    layers[i].cross_attn.visit(lp + "cross_attn.", f);
    layers[i].norm3.visit(lp + "norm3.", f);
    layers[i].ffn.visit(lp + "ffn.", f);
  }
}

template <typename T>
Var<T> mca(Var<T> q, Var<T> h_enc, const AttentionParams<T>& p, std::size_t n_heads) {
  return multi_head_attention(q, h_enc, p, n_heads);
}

template <typename T>
Var<T> decode(Var<T> q_expand, Var<T> h_enc, const DecoderParams<T>& p) {
  Graph<T>& g = q_expand.graph();
  if (q_expand.value().rank() != 2 || q_expand.dim(0) != p.pos.dim(0)) {
    throw DimensionError("decode: " + shape_str(q_expand.shape()) + " queries but positional table is " +
                         shape_str(p.pos.shape()));
  }
  Var<T> q = add(q_expand, g.param(p.pos));
  for (const auto& l : p.layers) {
    Var<T> q1 = add(msa(apply_norm(q, l.norm1), l.self_attn, p.n_heads), q);
    Var<T> q2 = add(mca(apply_norm(q1, l.norm2), h_enc, l.cross_attn, p.n_heads), q1);
    q = add(feed_forward(apply_norm(q2, l.norm3), l.ffn), q2);
  }
  return q;
}

template struct DecoderParams<float>;
template struct DecoderParams<double>;
template Var<float> mca(Var<float>, Var<float>, const AttentionParams<float>&, std::size_t);
template Var<double> mca(Var<double>, Var<double>, const AttentionParams<double>&, std::size_t);
template Var<float> decode(Var<float>, Var<float>, const DecoderParams<float>&);
template Var<double> decode(Var<double>, Var<double>, const DecoderParams<double>&);

}  // namespace qotr
