#pragma once

#include "qotr/image_io.hpp"

namespace qotr {

inline constexpr double kPsnrCap = 99.0;

double psnr(const Image8& a, const Image8& b);

// Quantizes both [-1, 1] tensors to 8 bits first.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace qotr
