#include "qotr/augment.hpp"

#include <cmath>

#include "qotr/errors.hpp"
#include "qotr/ops.hpp"

namespace qotr {

AugmentDraw draw_augment(std::size_t height, std::size_t width, const AugmentConfig& cfg,
                         std::mt19937_64& rng) {
  AugmentDraw d;
  if (cfg.brightness > 0) d.brightness = std::uniform_real_distribution<double>(-cfg.brightness, cfg.brightness)(rng);
  const long ty = static_cast<long>(std::floor(cfg.translate_frac * static_cast<double>(height)));
  const long tx = static_cast<long>(std::floor(cfg.translate_frac * static_cast<double>(width)));
  if (ty > 0) d.shift_y = std::uniform_int_distribution<long>(-ty, ty)(rng);
  if (tx > 0) d.shift_x = std::uniform_int_distribution<long>(-tx, tx)(rng);
  d.cut_h = static_cast<std::size_t>(std::floor(cfg.cutout_frac * static_cast<double>(height)));
  d.cut_w = static_cast<std::size_t>(std::floor(cfg.cutout_frac * static_cast<double>(width)));
  if (d.cut_h > 0 && d.cut_w > 0) {
    d.cut_top = std::uniform_int_distribution<std::size_t>(0, height - d.cut_h)(rng);
    d.cut_left = std::uniform_int_distribution<std::size_t>(0, width - d.cut_w)(rng);
  } else {
    d.cut_h = d.cut_w = 0;
  }
  return d;
}

template <typename T>
Var<T> apply_augment(Var<T> img, const AugmentDraw& d) {
  if (img.value().rank() != 3) throw DimensionError("augment expects [C,H,W], got " + shape_str(img.shape()));
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Var<T> x = img;
  if (d.brightness != 0.0) x = add_scalar(x, static_cast<T>(d.brightness));
  if (d.shift_y != 0 || d.shift_x != 0) {
    std::vector<std::int64_t> index(C * H * W, -1);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const long sy = static_cast<long>(y) - d.shift_y;
          const long sx = static_cast<long>(xx) - d.shift_x;
          if (sy < 0 || sx < 0 || sy >= static_cast<long>(H) || sx >= static_cast<long>(W)) continue;
          index[(c * H + y) * W + xx] = static_cast<std::int64_t>((c * H + sy) * W + sx);
        }
    x = gather(x, index, img.shape());
  }
  if (d.cut_h > 0 && d.cut_w > 0) {
    Tensor<T> mask({1, H, W}, T(1));
    for (std::size_t y = d.cut_top; y < std::min(H, d.cut_top + d.cut_h); ++y)
      for (std::size_t xx = d.cut_left; xx < std::min(W, d.cut_left + d.cut_w); ++xx) mask[y * W + xx] = T(0);
    x = mul(x, img.graph().constant(std::move(mask)));
  }
  return x;
}

template Var<float> apply_augment(Var<float>, const AugmentDraw&);
template Var<double> apply_augment(Var<double>, const AugmentDraw&);

}  // namespace qotr
