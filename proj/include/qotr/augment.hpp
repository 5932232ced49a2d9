#pragma once

#include <cstdint>
#include <random>

#include "qotr/autograd.hpp"

namespace qotr {

// Magnitudes of the three augmentation ops. Zero everywhere is the identity.
struct AugmentConfig {
  double brightness = 0.25;        // shift drawn from U(-b, b)
  double translate_frac = 0.125;   // integer shift up to frac * side, zero fill
  double cutout_frac = 0.25;       // side of the zeroed square, fraction of side
};

// One draw, shared by the real and fake images of a step.
struct AugmentDraw {
  double brightness = 0.0;
  long shift_y = 0;
  long shift_x = 0;
  std::size_t cut_top = 0;
  std::size_t cut_left = 0;
  std::size_t cut_h = 0;
  std::size_t cut_w = 0;
};

AugmentDraw draw_augment(std::size_t height, std::size_t width, const AugmentConfig& cfg,
                         std::mt19937_64& rng);

// Brightness shift, then translation, then cutout, on a [C, H, W] image.
template <typename T>
Var<T> apply_augment(Var<T> img, const AugmentDraw& d);

template <typename T>
Var<T> diff_augment(Var<T> img, const AugmentConfig& cfg, std::mt19937_64& rng) {
  return apply_augment(img, draw_augment(img.dim(1), img.dim(2), cfg, rng));
}

}  // namespace qotr
