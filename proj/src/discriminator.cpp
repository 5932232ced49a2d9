#include "qotr/discriminator.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "qotr/errors.hpp"
#include "qotr/ops.hpp"

namespace qotr {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<const MatR<T>> as_matrix(const Tensor<T>& w) {
  const std::size_t rows = w.dim(0);
  return Eigen::Map<const MatR<T>>(w.ptr(), static_cast<long>(rows), static_cast<long>(w.numel() / rows));
}

template <typename T>
Vec<T> normalized(Vec<T> x) {
  const T n = x.norm();
  return x / std::max(n, T(1e-12));
}

// v = W^T u normalized.
template <typename T>
Vec<T> right_vector(const Tensor<T>& w, const Tensor<T>& u) {
  Eigen::Map<const Vec<T>> um(u.ptr(), static_cast<long>(u.numel()));
  return normalized<T>(as_matrix(w).transpose() * um);
}

constexpr std::size_t kKernel = 4;
constexpr float kLeakySlope = 0.2f;

}  // namespace

template <typename T>
SpectralNorm<T> spectral_normalize(const Tensor<T>& w, Tensor<T>& u, std::size_t n_iter) {
  if (w.rank() < 2) throw DimensionError("spectral_normalize expects a matrix or conv kernel");
  if (u.numel() != w.dim(0)) {
    throw DimensionError("spectral_normalize: u has " + std::to_string(u.numel()) + " entries for weight " +
                         shape_str(w.shape()));
  }
  auto W = as_matrix(w);
  Eigen::Map<Vec<T>> um(u.ptr(), static_cast<long>(u.numel()));
  Vec<T> v = right_vector(w, u);
  for (std::size_t i = 0; i < n_iter; ++i) {
    um = normalized<T>(W * v);
    v = normalized<T>(W.transpose() * um);
  }
  SpectralNorm<T> out;
  out.sigma = um.dot(W * v);
  out.weight = Tensor<T>(w.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) out.weight[i] = w[i] / out.sigma;
  out.v = Tensor<T>({static_cast<std::size_t>(v.size())}, std::vector<T>(v.data(), v.data() + v.size()));
  return out;
}

template <typename T>
DiscriminatorParams<T> DiscriminatorParams<T>::init(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  if (cfg.n_scales == 0) throw ConfigError("discriminator needs n_scales >= 1");
  if (cfg.layers == 0) throw ConfigError("discriminator needs layers >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  DiscriminatorParams p;
  for (std::size_t s = 0; s < cfg.n_scales; ++s) {
    std::vector<SNConv<T>> stack;
    auto add_conv = [&](std::size_t in, std::size_t out, std::size_t stride) {
      SNConv<T> c;
      c.w = Tensor<T>({out, in, kKernel, kKernel});
      std::normal_distribution<double> dist(0.0, 0.02);
      for (auto& v : c.w.data()) v = static_cast<T>(dist(rng));
      c.b = Tensor<T>({out});
      c.u = Tensor<T>({out});
      double norm = 0;
      for (auto& v : c.u.data()) {
        v = static_cast<T>(unit(rng));
        norm += static_cast<double>(v) * v;
      }
      for (auto& v : c.u.data()) v = static_cast<T>(v / std::sqrt(norm));
      c.stride = stride;
      c.pad = 2;
      stack.push_back(std::move(c));
    };
    std::size_t ch = cfg.channels;
    add_conv(3, ch, 2);
    for (std::size_t l = 1; l < cfg.layers; ++l) {
      add_conv(ch, ch * 2, 2);
      ch *= 2;
    }
    add_conv(ch, ch * 2, 1);
    add_conv(ch * 2, 1, 1);
    p.scales.push_back(std::move(stack));
  }
  return p;
}

template <typename T>
std::size_t DiscriminatorParams<T>::receptive_field() const {
  std::size_t rf = 1, jump = 1;
  for (const auto& c : scales.front()) {
    rf += (c.w.dim(2) - 1) * jump;
    jump *= c.stride;
  }
  return rf;
}

template <typename T>
void DiscriminatorParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t s = 0; s < scales.size(); ++s)
    for (std::size_t l = 0; l < scales[s].size(); ++l) {
      const std::string p = prefix + "scales." + std::to_string(s) + ".conv" + std::to_string(l) + ".";
      f(p + "w", scales[s][l].w);
      f(p + "b", scales[s][l].b);
    }
}

template <typename T>
void DiscriminatorParams<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  for (std::size_t s = 0; s < scales.size(); ++s)
    for (std::size_t l = 0; l < scales[s].size(); ++l) {
      const std::string p = prefix + "scales." + std::to_string(s) + ".conv" + std::to_string(l) + ".";
      f(p + "w", scales[s][l].w);
      f(p + "b", scales[s][l].b);
    }
}

template <typename T>
void DiscriminatorParams<T>::visit_state(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t s = 0; s < scales.size(); ++s)
    for (std::size_t l = 0; l < scales[s].size(); ++l)
      f(prefix + "scales." + std::to_string(s) + ".conv" + std::to_string(l) + ".u", scales[s][l].u);
}

template <typename T>
void DiscriminatorParams<T>::visit_state(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  for (std::size_t s = 0; s < scales.size(); ++s)
    for (std::size_t l = 0; l < scales[s].size(); ++l)
      f(prefix + "scales." + std::to_string(s) + ".conv" + std::to_string(l) + ".u", scales[s][l].u);
}

template <typename T>
void update_spectral_state(DiscriminatorParams<T>& p, std::size_t n_iter) {
  for (auto& stack : p.scales)
    for (auto& c : stack) spectral_normalize(c.w, c.u, n_iter);
}

template <typename T>
std::vector<Var<T>> d_forward(Var<T> img, const DiscriminatorParams<T>& p) {
  if (img.value().rank() != 3 || img.dim(0) != 3) {
    throw DimensionError("d_forward expects a [3,H,W] image, got " + shape_str(img.shape()));
  }
  Graph<T>& g = img.graph();
  const std::size_t rf = p.receptive_field();
  const std::size_t coarsest = std::min(img.dim(1), img.dim(2)) >> (p.n_scales() - 1);
  if (coarsest < rf) {
    throw ConfigError("image " + shape_str(img.shape()) + " is smaller than the discriminator receptive field (" +
                      std::to_string(rf) + " px) at scale " + std::to_string(p.n_scales() - 1));
  }
  std::vector<Var<T>> out;
  Var<T> x = reshape(img, {1, 3, img.dim(1), img.dim(2)});
  for (std::size_t s = 0; s < p.scales.size(); ++s) {
    if (s > 0) x = avg_pool2(x);
    Var<T> h = x;
    const auto& stack = p.scales[s];
    for (std::size_t l = 0; l < stack.size(); ++l) {
      const SNConv<T>& c = stack[l];
      Var<T> w = g.param(c.w);
      // sigma = u^T W v with u, v held constant.
      const Vec<T> v = right_vector(c.w, c.u);
      const std::size_t rows = c.w.dim(0), cols = c.w.numel() / rows;
      Tensor<T> uv(c.w.shape());
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) uv[i * cols + j] = c.u[i] * v[j];
      Var<T> sigma = sum(mul(w, g.constant(std::move(uv))));
      h = conv2d(h, div(w, sigma), g.param(c.b), c.stride, c.pad);
      if (l + 1 < stack.size()) h = leaky_relu(h, static_cast<T>(kLeakySlope));
    }
    out.push_back(h);
  }
  return out;
}

#define QOTR_INSTANTIATE_DISC(T)                                                   \
  template SpectralNorm<T> spectral_normalize(const Tensor<T>&, Tensor<T>&, std::size_t); \
  template struct DiscriminatorParams<T>;                                          \
  template void update_spectral_state(DiscriminatorParams<T>&, std::size_t);       \
  template std::vector<Var<T>> d_forward(Var<T>, const DiscriminatorParams<T>&);

QOTR_INSTANTIATE_DISC(float)
QOTR_INSTANTIATE_DISC(double)

}  // namespace qotr
