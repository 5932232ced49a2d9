#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "qotr/tensor.hpp"

namespace qotr {

// Interleaved 8-bit RGB.
struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;

  bool operator==(const Image8&) const = default;
};

// Reads any PNG libpng understands and converts it to 8-bit RGB.
Image8 read_png(const std::filesystem::path& path);
void write_png(const Image8& img, const std::filesystem::path& path);

// [3, H, W] in [-1, 1]: v = (p / 255 - 0.5) / 0.5.
template <typename T>
Tensor<T> to_tensor(const Image8& img);
// Inverse, with rounding and clamping to [0, 255].
template <typename T>
Image8 to_image(const Tensor<T>& t);

// Bilinear resize of a [C, H, W] tensor, half-pixel centers, edge clamp.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> hflip(const Tensor<T>& img);

// Sorted *.png files in dir.
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);

}  // namespace qotr
