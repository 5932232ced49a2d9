#include <cmath>
#include <random>

#include "qotr/errors.hpp"
#include "qotr/layers.hpp"
#include "qotr/ops.hpp"

namespace qotr {

template <typename T>
Tensor<T> truncated_normal(Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    double x;
    do {
      x = dist(rng);
    } while (std::abs(x) > 2.0 * std);
    v = static_cast<T>(x);
  }
  return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
NormParams<T> NormParams<T>::init(std::size_t dim) {
  return {Tensor<T>({dim}, T(1)), Tensor<T>({dim}, T(0))};
}

template <typename T>
void NormParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "gamma", gamma);
  f(prefix + "beta", beta);
}

template <typename T>
void NormParams<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  f(prefix + "gamma", gamma);
  f(prefix + "beta", beta);
}

template <typename T>
AttentionParams<T> AttentionParams<T>::init(std::size_t dim, std::mt19937_64& rng) {
  AttentionParams p;
  p.wq = truncated_normal<T>({dim, dim}, kInitStd, rng);
  p.wk = truncated_normal<T>({dim, dim}, kInitStd, rng);
  p.wv = truncated_normal<T>({dim, dim}, kInitStd, rng);
  p.wo = truncated_normal<T>({dim, dim}, kInitStd, rng);
  p.bq = p.bk = p.bv = p.bo = Tensor<T>({dim});
  return p;
}

template <typename T>
void AttentionParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "wq", wq); f(prefix + "bq", bq);
  f(prefix + "wk", wk); f(prefix + "bk", bk);
  f(prefix + "wv", wv); f(prefix + "bv", bv);
  f(prefix + "wo", wo); f(prefix + "bo", bo);
}

template <typename T>
void AttentionParams<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  f(prefix + "wq", wq); f(prefix + "bq", bq);
  f(prefix + "wk", wk); f(prefix + "bk", bk);
  f(prefix + "wv", wv); f(prefix + "bv", bv);
  f(prefix + "wo", wo); f(prefix + "bo", bo);
}

template <typename T>
FeedForwardParams<T> FeedForwardParams<T>::init(std::size_t dim, std::mt19937_64& rng) {
  FeedForwardParams p;
  p.w1 = truncated_normal<T>({dim, 4 * dim}, kInitStd, rng);
  p.b1 = Tensor<T>({4 * dim});
  p.w2 = truncated_normal<T>({4 * dim, dim}, kInitStd, rng);
  p.b2 = Tensor<T>({dim});
  return p;
}

template <typename T>
void FeedForwardParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "w1", w1); f(prefix + "b1", b1);
  f(prefix + "w2", w2); f(prefix + "b2", b2);
}

template <typename T>
void FeedForwardParams<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  f(prefix + "w1", w1); f(prefix + "b1", b1);
  f(prefix + "w2", w2); f(prefix + "b2", b2);
}

template <typename T>
Var<T> apply_norm(Var<T> x, const NormParams<T>& p) {
  Graph<T>& g = x.graph();
  return layer_norm(x, g.param(p.gamma), g.param(p.beta), T(1e-5));
}

template <typename T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v) {
  const std::size_t dh = q.shape().back();
  Var<T> scores = scale(matmul(q, transpose(k)), T(1) / std::sqrt(static_cast<T>(dh)));
  Var<T> probs = softmax_lastdim(scores);
  q.graph().observe_attention(probs.value());
  return matmul(probs, v);
}

template <typename T>
Var<T> attention_head(Var<T> x, Var<T> y, Var<T> wq, Var<T> wk, Var<T> wv) {
  return scaled_dot_attention(matmul(x, wq), matmul(y, wk), matmul(y, wv));
}

template <typename T>
Var<T> multi_head_attention(Var<T> x, Var<T> y, const AttentionParams<T>& p, std::size_t n_heads) {
  Graph<T>& g = x.graph();
  const std::size_t dim = p.wq.dim(0);
  if (n_heads == 0 || dim % n_heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (x.shape().back() != dim || y.shape().back() != dim) {
    throw DimensionError("attention inputs " + shape_str(x.shape()) + " / " + shape_str(y.shape()) +
                         " for width " + std::to_string(dim));
  }
  Var<T> q = linear(x, g.param(p.wq), g.param(p.bq));
  Var<T> k = linear(y, g.param(p.wk), g.param(p.bk));
  Var<T> v = linear(y, g.param(p.wv), g.param(p.bv));
  Var<T> heads;
  if (n_heads == 1) {
    heads = scaled_dot_attention(q, k, v);
  } else {
    const std::size_t dh = dim / n_heads;
    std::vector<Var<T>> outs;
    outs.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
      outs.push_back(scaled_dot_attention(slice_last(q, h * dh, (h + 1) * dh),
                                          slice_last(k, h * dh, (h + 1) * dh),
                                          slice_last(v, h * dh, (h + 1) * dh)));
    }
    heads = concat_last(outs);
  }
  return linear(heads, g.param(p.wo), g.param(p.bo));
}

template <typename T>
Var<T> feed_forward(Var<T> x, const FeedForwardParams<T>& p) {
  Graph<T>& g = x.graph();
  Var<T> h = gelu(linear(x, g.param(p.w1), g.param(p.b1)));
  return linear(h, g.param(p.w2), g.param(p.b2));
}

#define QOTR_INSTANTIATE_LAYERS(T)                                                       \
  template Tensor<T> truncated_normal<T>(Shape, double, std::mt19937_64&);                \
  template Tensor<T> uniform_tensor<T>(Shape, double, double, std::mt19937_64&);          \
  template struct NormParams<T>;                                                          \
  template struct AttentionParams<T>;                                                     \
  template struct FeedForwardParams<T>;                                                   \
  template Var<T> apply_norm(Var<T>, const NormParams<T>&);                               \
  template Var<T> scaled_dot_attention(Var<T>, Var<T>, Var<T>);                           \
  template Var<T> attention_head(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>);                 \
  template Var<T> multi_head_attention(Var<T>, Var<T>, const AttentionParams<T>&, std::size_t); \
  template Var<T> feed_forward(Var<T>, const FeedForwardParams<T>&);

QOTR_INSTANTIATE_LAYERS(float)
QOTR_INSTANTIATE_LAYERS(double)

}  // namespace qotr
