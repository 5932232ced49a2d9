#include "qotr/outpaint.hpp"

#include <random>

#include "qotr/errors.hpp"
#include "qotr/image_io.hpp"

namespace qotr {

double OutpaintResult::area_ratio() const {
  return static_cast<double>(image.dim(1)) * static_cast<double>(image.dim(2)) / (original_h * original_w);
}

OutpaintResult outpaint(const Tensor<float>& img, const GeneratorParams<float>& gen, const GridSpec& grid,
                        const NoiseSpec& noise, std::size_t steps, std::uint64_t seed) {
  if (steps == 0) throw ConfigError("outpaint needs steps >= 1");
  if (img.rank() != 3 || img.dim(0) != 3) throw DimensionError("outpaint expects [3,H,W], got " + shape_str(img.shape()));
  if (gen.dec.pos.dim(0) != token_counts(grid).R || gen.enc.pos.dim(0) != token_counts(grid).L ||
      gen.enc.embed.dim(0) != grid.token_width() || gen.psm.w_proj.dim(1) != grid.patch_width()) {
    throw ConfigError("checkpoint model does not match the grid");
  }
  const OverlapMap omap(grid);
  std::mt19937_64 rng(seed);
  OutpaintResult r;
  r.image = img;
  r.original_h = static_cast<double>(img.dim(1));
  r.original_w = static_cast<double>(img.dim(2));
  for (std::size_t k = 0; k < steps; ++k) {
    const double sy = static_cast<double>(grid.H) / static_cast<double>(r.image.dim(1));
    const double sx = static_cast<double>(grid.W) / static_cast<double>(r.image.dim(2));
    const Tensor<float> x = resize_bilinear(r.image, grid.H, grid.W);
    Graph<float> g;
    r.image = generate(g, x, gen, grid, omap, noise, rng).canvas.value();
    r.original_h *= sy;
    r.original_w *= sx;
  }
  return r;
}

}  // namespace qotr
