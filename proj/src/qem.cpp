#include "qotr/qem.hpp"

#include "qotr/errors.hpp"
#include "qotr/ops.hpp"

namespace qotr {

NoiseDistribution parse_noise_distribution(const std::string& name) {
  if (name == "normal") return NoiseDistribution::kNormal;
  if (name == "uniform") return NoiseDistribution::kUniform;
  throw ConfigError("unknown noise distribution '" + name + "' (expected normal|uniform)");
}

std::string to_string(NoiseDistribution d) {
  return d == NoiseDistribution::kNormal ? "normal" : "uniform";
}

template <typename T>
QEMParams<T> QEMParams<T>::init(std::size_t dim, std::size_t n_blocks, std::size_t noise_dim,
                                std::mt19937_64& rng) {
  if (n_blocks == 0) throw ConfigError("QEM needs at least one residual block");
  if (noise_dim == 0) throw ConfigError("noise_dim must be >= 1");
  QEMParams p;
  p.mlp_w1 = truncated_normal<T>({noise_dim, dim}, kInitStd, rng);
  p.mlp_b1 = Tensor<T>({dim});
  p.mlp_w2 = truncated_normal<T>({dim, dim}, kInitStd, rng);
  p.mlp_b2 = Tensor<T>({dim});
  for (std::size_t i = 0; i < n_blocks; ++i) {
    QEMBlock<T> b;
    b.norm1 = NormParams<T>::init(dim);
    // Offsets start at zero so every block begins as a plain convolution.
    b.offset_w = Tensor<T>({18, dim, 3, 3});
    b.offset_b = Tensor<T>({18});
    b.deform_w = truncated_normal<T>({dim, dim, 3, 3}, kInitStd, rng);
    b.deform_b = Tensor<T>({dim});
    b.norm2 = NormParams<T>::init(dim);
    b.point_w = truncated_normal<T>({dim, dim, 1, 1}, kInitStd, rng);
    b.point_b = Tensor<T>({dim});
    p.blocks.push_back(std::move(b));
  }
  p.out_norm = NormParams<T>::init(dim);
  p.out_w = truncated_normal<T>({dim, dim}, kInitStd, rng);
  p.out_b = Tensor<T>({dim});
  return p;
}

template <typename T>
void QEMParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "mlp_w1", mlp_w1); f(prefix + "mlp_b1", mlp_b1);
  f(prefix + "mlp_w2", mlp_w2); f(prefix + "mlp_b2", mlp_b2);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string bp = prefix + "blocks." + std::to_string(i) + ".";
    auto& b = blocks[i];
    b.norm1.visit(bp + "norm1.", f);
    f(bp + "offset_w", b.offset_w); f(bp + "offset_b", b.offset_b);
    f(bp + "deform_w", b.deform_w); f(bp + "deform_b", b.deform_b);
    b.norm2.visit(bp + "norm2.", f);
    f(bp + "point_w", b.point_w); f(bp + "point_b", b.point_b);
  }
  out_norm.visit(prefix + "out_norm.", f);
  f(prefix + "out_w", out_w); f(prefix + "out_b", out_b);
}

template <typename T>
void QEMParams<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  f(prefix + "mlp_w1", mlp_w1); f(prefix + "mlp_b1", mlp_b1);
  f(prefix + "mlp_w2", mlp_w2); f(prefix + "mlp_b2", mlp_b2);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string bp = prefix + "blocks." + std::to_string(i) + ".";
    const auto& b = blocks[i];
    b.norm1.visit(bp + "norm1.", f);
    f(bp + "offset_w", b.offset_w); f(bp + "offset_b", b.offset_b);
    f(bp + "deform_w", b.deform_w); f(bp + "deform_b", b.deform_b);
    b.norm2.visit(bp + "norm2.", f);
    f(bp + "point_w", b.point_w); f(bp + "point_b", b.point_b);
  }
  out_norm.visit(prefix + "out_norm.", f);
  f(prefix + "out_w", out_w); f(prefix + "out_b", out_b);
}

template <typename T>
Var<T> tokens_to_map(Var<T> h_enc, const GridSpec& spec) {
  const std::size_t L = token_counts(spec).L;
  if (h_enc.value().rank() != 2 || h_enc.dim(0) != L) {
    throw DimensionError("tokens_to_map: " + shape_str(h_enc.shape()) + " for grid with L=" +
                         std::to_string(L));
  }
  return reshape(transpose(h_enc), {h_enc.dim(1), spec.center_rows(), spec.center_cols()});
}

template <typename T>
Var<T> map_to_tokens(Var<T> fmap) {
  if (fmap.value().rank() != 3) throw DimensionError("map_to_tokens expects [D,h,w], got " + shape_str(fmap.shape()));
  return transpose(reshape(fmap, {fmap.dim(0), fmap.dim(1) * fmap.dim(2)}));
}

template <typename T>
Tensor<T> sample_noise(std::size_t rows, const NoiseSpec& noise, std::mt19937_64& rng) {
  Tensor<T> z({rows, noise.noise_dim});
  if (noise.distribution == NoiseDistribution::kNormal) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : z.data()) v = static_cast<T>(dist(rng));
  } else {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : z.data()) v = static_cast<T>(dist(rng));
  }
  return z;
}

template <typename T>
Var<T> noise_pad(Var<T> fmap, const GridSpec& spec, const QEMParams<T>& p,
                 const NoiseSpec& noise, std::mt19937_64& rng) {
  if (noise.noise_dim != p.noise_dim()) {
    throw ConfigError("noise_dim " + std::to_string(noise.noise_dim) + " does not match QEM weights (" +
                      std::to_string(p.noise_dim()) + ")");
  }
  const RingIndex ring = ring_index(spec);
  Graph<T>& g = fmap.graph();
  const std::size_t D = fmap.dim(0);
  const std::size_t L = fmap.dim(1) * fmap.dim(2);
  if (fmap.dim(1) != spec.center_rows() || fmap.dim(2) != spec.center_cols()) {
    throw DimensionError("noise_pad: map " + shape_str(fmap.shape()) + " does not match grid");
  }
  Var<T> z = g.constant(sample_noise<T>(ring.size(), noise, rng));
  Var<T> ring_tokens = linear(gelu(linear(z, g.param(p.mlp_w1), g.param(p.mlp_b1))),
                              g.param(p.mlp_w2), g.param(p.mlp_b2));
  Var<T> all = concat_rows<T>({map_to_tokens(fmap), ring_tokens});

  const std::size_t m = spec.margin_cells();
  const std::size_t cells = ring.rows * ring.cols;
  std::vector<std::int64_t> index(D * cells);
  // Output is channels-first: element (d, cell) reads row src(cell), column d.
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const std::size_t r = cell / ring.cols, c = cell % ring.cols;
    const std::int64_t slot = ring.slot_of[cell];
    const std::size_t src =
        slot < 0 ? (r - m) * spec.center_cols() + (c - m) : L + static_cast<std::size_t>(slot);
    for (std::size_t d = 0; d < D; ++d) index[d * cells + cell] = static_cast<std::int64_t>(src * D + d);
  }
  return gather(all, index, {D, ring.rows, ring.cols});
}

template <typename T>
Var<T> qem_block(Var<T> x, const QEMBlock<T>& b) {
  Graph<T>& g = x.graph();
  const std::size_t D = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto channel_norm = [&](Var<T> v, const NormParams<T>& n) {
    return reshape(transpose(apply_norm(map_to_tokens(v), n)), {D, h, w});
  };
  Var<T> y = channel_norm(x, b.norm1);
  Var<T> off = conv2d(reshape(y, {1, D, h, w}), g.param(b.offset_w), g.param(b.offset_b), 1, 1);
  Var<T> d = gelu(deformable_conv2d(y, reshape(off, {18, h, w}), g.param(b.deform_w), g.param(b.deform_b)));
  Var<T> z = conv2d(reshape(channel_norm(d, b.norm2), {1, D, h, w}), g.param(b.point_w), g.param(b.point_b), 1, 0);
  return add(x, reshape(z, {D, h, w}));
}

template <typename T>
Var<T> expand_queries(Var<T> h_enc, const GridSpec& spec, const QEMParams<T>& p,
                      const NoiseSpec& noise, std::mt19937_64& rng) {
  Graph<T>& g = h_enc.graph();
  Var<T> x = noise_pad(tokens_to_map(h_enc, spec), spec, p, noise, rng);
  for (const auto& b : p.blocks) x = qem_block(x, b);
  const RingIndex ring = ring_index(spec);
  const std::size_t D = x.dim(0);
  std::vector<std::int64_t> index;
  index.reserve(ring.size() * D);
  for (const Cell& cell : ring.cells) {
    const std::size_t src = cell.row * ring.cols + cell.col;
    for (std::size_t d = 0; d < D; ++d) index.push_back(static_cast<std::int64_t>(src * D + d));
  }
  Var<T> q = gather(map_to_tokens(x), index, {ring.size(), D});
  return linear(apply_norm(q, p.out_norm), g.param(p.out_w), g.param(p.out_b));
}

#define QOTR_INSTANTIATE_QEM(T)                                                              \
  template struct QEMParams<T>;                                                              \
  template Var<T> tokens_to_map(Var<T>, const GridSpec&);                                    \
  template Var<T> map_to_tokens(Var<T>);                                                     \
  template Tensor<T> sample_noise<T>(std::size_t, const NoiseSpec&, std::mt19937_64&);        \
  template Var<T> noise_pad(Var<T>, const GridSpec&, const QEMParams<T>&, const NoiseSpec&,  \
                            std::mt19937_64&);                                               \
  template Var<T> qem_block(Var<T>, const QEMBlock<T>&);                                     \
  template Var<T> expand_queries(Var<T>, const GridSpec&, const QEMParams<T>&,               \
                                 const NoiseSpec&, std::mt19937_64&);

QOTR_INSTANTIATE_QEM(float)
QOTR_INSTANTIATE_QEM(double)

}  // namespace qotr
