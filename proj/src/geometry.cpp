#include "qotr/geometry.hpp"

#include <algorithm>
#include <string>

#include "qotr/errors.hpp"

namespace qotr {

void GridSpec::validate() const {
  if (P == 0) throw ConfigError("GridSpec.P must be positive");
  if (H == 0) throw ConfigError("GridSpec.H must be positive");
  if (W == 0) throw ConfigError("GridSpec.W must be positive");
  if (H % P != 0) throw ConfigError("GridSpec.H=" + std::to_string(H) + " is not divisible by P=" + std::to_string(P));
  if (W % P != 0) throw ConfigError("GridSpec.W=" + std::to_string(W) + " is not divisible by P=" + std::to_string(P));
  if (M % P != 0) throw ConfigError("GridSpec.M=" + std::to_string(M) + " is not divisible by P=" + std::to_string(P));
  if (o >= P) throw ConfigError("GridSpec.o=" + std::to_string(o) + " must be smaller than P=" + std::to_string(P));
}

TokenCounts token_counts(const GridSpec& spec) {
  spec.validate();
  const std::size_t p2 = spec.P * spec.P;
  return {spec.H * spec.W / p2, (spec.canvas_h() * spec.canvas_w() - spec.H * spec.W) / p2};
}

bool in_center_block(const GridSpec& spec, Cell cell) {
  const std::size_t m = spec.margin_cells();
  return cell.row >= m && cell.row < m + spec.center_rows() && cell.col >= m &&
         cell.col < m + spec.center_cols();
}

RingIndex ring_index(const GridSpec& spec) {
  spec.validate();
  if (spec.M == 0) throw GeometryError("ring_index: margin M = 0 leaves an empty ring");
  RingIndex ring;
  ring.rows = spec.grid_rows();
  ring.cols = spec.grid_cols();
  ring.slot_of.assign(ring.rows * ring.cols, -1);
  for (std::size_t r = 0; r < ring.rows; ++r) {
    for (std::size_t c = 0; c < ring.cols; ++c) {
      if (in_center_block(spec, {r, c})) continue;
      ring.slot_of[r * ring.cols + c] = static_cast<std::int64_t>(ring.cells.size());
      ring.cells.push_back({r, c});
    }
  }
  return ring;
}

Rect patch_footprint_unclipped(Cell cell, const GridSpec& spec) {
  const long p = static_cast<long>(spec.P);
  const long o = static_cast<long>(spec.o);
  const long top = static_cast<long>(cell.row) * p - o;
  const long left = static_cast<long>(cell.col) * p - o;
  return {top, left, top + p + 2 * o, left + p + 2 * o};
}

Rect patch_footprint(Cell cell, const GridSpec& spec) {
  Rect r = patch_footprint_unclipped(cell, spec);
  r.top = std::max(r.top, 0L);
  r.left = std::max(r.left, 0L);
  r.bottom = std::min(r.bottom, static_cast<long>(spec.canvas_h()));
  r.right = std::min(r.right, static_cast<long>(spec.canvas_w()));
  return r;
}

std::vector<std::int64_t> partition_gather_index(const GridSpec& spec) {
  spec.validate();
  const std::size_t P = spec.P, H = spec.H, W = spec.W;
  const std::size_t gc = spec.center_cols();
  const std::size_t L = H * W / (P * P);
  std::vector<std::int64_t> index;
  index.reserve(L * 3 * P * P);
  for (std::size_t t = 0; t < L; ++t) {
    const std::size_t pr = t / gc, pc = t % gc;
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < P; ++y)
        for (std::size_t x = 0; x < P; ++x)
          index.push_back(static_cast<std::int64_t>((ch * H + pr * P + y) * W + pc * P + x));
  }
  return index;
}

template <typename T>
Tensor<T> partition_to_tokens(const Tensor<T>& img, const GridSpec& spec) {
  if (img.shape() != Shape{3, spec.H, spec.W}) {
    throw DimensionError("partition_to_tokens: image " + shape_str(img.shape()) +
                         " does not match grid " + shape_str({3, spec.H, spec.W}));
  }
  const auto index = partition_gather_index(spec);
  const std::size_t L = spec.H * spec.W / (spec.P * spec.P);
  Tensor<T> out({L, spec.token_width()});
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = img[static_cast<std::size_t>(index[i])];
  return out;
}

template <typename T>
Tensor<T> tokens_to_image(const Tensor<T>& tokens, const GridSpec& spec) {
  const std::size_t L = token_counts(spec).L;
  if (tokens.shape() != Shape{L, spec.token_width()}) {
    throw DimensionError("tokens_to_image: tokens " + shape_str(tokens.shape()) +
                         " do not match grid (expected " + shape_str({L, spec.token_width()}) + ")");
  }
  const auto index = partition_gather_index(spec);
  Tensor<T> img({3, spec.H, spec.W});
  for (std::size_t i = 0; i < index.size(); ++i) img[static_cast<std::size_t>(index[i])] = tokens[i];
  return img;
}

template Tensor<float> partition_to_tokens(const Tensor<float>&, const GridSpec&);
template Tensor<double> partition_to_tokens(const Tensor<double>&, const GridSpec&);
template Tensor<float> tokens_to_image(const Tensor<float>&, const GridSpec&);
template Tensor<double> tokens_to_image(const Tensor<double>&, const GridSpec&);

}  // namespace qotr
