#pragma once

#include <cstdint>

#include "qotr/generator.hpp"

namespace qotr {

struct OutpaintResult {
  Tensor<float> image;  // [3, H+2M, W+2M]
  // Size of the original input inside the output, in output pixels.
  double original_h = 0;
  double original_w = 0;

  double area_ratio() const;
};

// Repeats `steps` times: resize the current image to H x W (bilinear),
// generate, assemble to (H+2M) x (W+2M).
OutpaintResult outpaint(const Tensor<float>& img, const GeneratorParams<float>& gen, const GridSpec& grid,
                        const NoiseSpec& noise, std::size_t steps, std::uint64_t seed);

}  // namespace qotr
