#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "qotr/tensor.hpp"

namespace qotr {

// Input image H x W is extended by M pixels on every side; the model works
// on P x P patches, and output patches reach o pixels past each edge.
struct GridSpec {
  std::size_t H = 64;
  std::size_t W = 64;
  std::size_t M = 16;
  std::size_t P = 8;
  std::size_t o = 4;

  // Throws ConfigError naming the offending field.
  void validate() const;

  std::size_t canvas_h() const { return H + 2 * M; }
  std::size_t canvas_w() const { return W + 2 * M; }
  std::size_t grid_rows() const { return canvas_h() / P; }
  std::size_t grid_cols() const { return canvas_w() / P; }
  std::size_t center_rows() const { return H / P; }
  std::size_t center_cols() const { return W / P; }
  std::size_t margin_cells() const { return M / P; }
  // Side of an output patch, P + 2o.
  std::size_t ext() const { return P + 2 * o; }
  std::size_t token_width() const { return 3 * P * P; }
  std::size_t patch_width() const { return 3 * ext() * ext(); }

  bool operator==(const GridSpec&) const = default;
};

struct TokenCounts {
  std::size_t L = 0;
  std::size_t R = 0;
};

TokenCounts token_counts(const GridSpec& spec);

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const Cell&) const = default;
};

// Frame cells of the output grid in row-major order, skipping the center
// block. slot_of maps row * grid_cols + col to a ring token index, or -1
// for center cells.
struct RingIndex {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Cell> cells;
  std::vector<std::int64_t> slot_of;

  std::size_t size() const { return cells.size(); }
};

RingIndex ring_index(const GridSpec& spec);

bool in_center_block(const GridSpec& spec, Cell cell);

// Half-open pixel rectangle [top, bottom) x [left, right).
struct Rect {
  long top = 0;
  long left = 0;
  long bottom = 0;
  long right = 0;

  long height() const { return bottom - top; }
  long width() const { return right - left; }
  bool operator==(const Rect&) const = default;
};

// Extended footprint of an output cell, clipped to the canvas.
Rect patch_footprint(Cell cell, const GridSpec& spec);
// Same rectangle before clipping (may start at negative coordinates).
Rect patch_footprint_unclipped(Cell cell, const GridSpec& spec);

// [3, H, W] image -> [L, 3P^2] tokens, row-major patch order, each token the
// (channel, row, col) flattening of its patch.
template <typename T>
Tensor<T> partition_to_tokens(const Tensor<T>& img, const GridSpec& spec);

// Exact inverse of partition_to_tokens.
template <typename T>
Tensor<T> tokens_to_image(const Tensor<T>& tokens, const GridSpec& spec);

// Gather index realizing partition_to_tokens on a flattened [3, H, W]
// image (usable with the differentiable gather op).
std::vector<std::int64_t> partition_gather_index(const GridSpec& spec);

}  // namespace qotr
