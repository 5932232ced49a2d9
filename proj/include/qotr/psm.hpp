#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "qotr/autograd.hpp"
#include "qotr/geometry.hpp"
#include "qotr/params.hpp"

namespace qotr {

template <typename T>
struct PSMParams {
  Tensor<T> w_proj;  // [D, 3 (P+2o)^2]
  Tensor<T> b_proj;

  static PSMParams init(std::size_t dim, const GridSpec& spec, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;
};

// Number of extended ring patches covering each canvas pixel.
class OverlapMap {
 public:
  explicit OverlapMap(const GridSpec& spec);

  const GridSpec& spec() const { return spec_; }
  std::uint32_t count(std::size_t y, std::size_t x) const { return counts_[y * spec_.canvas_w() + x]; }
  const std::vector<std::uint32_t>& counts() const { return counts_; }
  bool in_center(std::size_t y, std::size_t x) const;

 private:
  GridSpec spec_;
  std::vector<std::uint32_t> counts_;
};

// q_M [R, D] -> [R, 3 (P+2o)^2], one linear map per token.
template <typename T>
Var<T> project_patches(Var<T> q, const PSMParams<T>& p);

// Places ring patches (ring order) on the (H+2M) x (W+2M) canvas, averages
// overlapping predictions, then writes x verbatim into the center H x W
// block. Patch element layout is (channel, row, col) over the unclipped
// (P+2o)^2 footprint; elements outside the canvas are dropped.
template <typename T>
Var<T> assemble(Var<T> x, Var<T> patches, const GridSpec& spec, const OverlapMap& omap);

// Ground-truth extended footprints [R, 3 (P+2o)^2] of a full canvas image,
// zero where the footprint leaves the canvas.
template <typename T>
Tensor<T> disassemble_targets(const Tensor<T>& y, const GridSpec& spec);

// Central H x W block of a [3, H+2M, W+2M] canvas.
template <typename T>
Tensor<T> center_crop(const Tensor<T>& canvas, const GridSpec& spec);

}  // namespace qotr
