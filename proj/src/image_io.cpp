#include "qotr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "qotr/errors.hpp"

namespace qotr {
Image8 read_png(const std::filesystem::path& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) {
    throw std::runtime_error(path.string() + ": " + pi.message);
  }
  pi.format = PNG_FORMAT_RGB;
  Image8 img;
  img.height = pi.height;
  img.width = pi.width;
  img.rgb.resize(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, img.rgb.data(), 0, nullptr)) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    throw std::runtime_error(path.string() + ": " + msg);
  }
  return img;
}

void write_png(const Image8& img, const std::filesystem::path& path) {
  if (img.rgb.size() != img.width * img.height * 3) throw DimensionError("write_png: buffer size mismatch");
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, img.rgb.data(), 0, nullptr)) {
    throw std::runtime_error(path.string() + ": " + pi.message);
  }
}

template <typename T>
Tensor<T> to_tensor(const Image8& img) {
  const std::size_t H = img.height, W = img.width;
  Tensor<T> t({3, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double p = img.rgb[(y * W + x) * 3 + c];
        t[(c * H + y) * W + x] = static_cast<T>((p / 255.0 - 0.5) / 0.5);
      }
  return t;
}

template <typename T>
Image8 to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw DimensionError("to_image expects [3,H,W], got " + shape_str(t.shape()));
  Image8 img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  const std::size_t H = img.height, W = img.width;
  img.rgb.resize(H * W * 3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (static_cast<double>(t[(c * H + y) * W + x]) * 0.5 + 0.5) * 255.0;
        const double q = std::isfinite(v) ? std::clamp(std::round(v), 0.0, 255.0) : 0.0;
        img.rgb[(y * W + x) * 3 + c] = static_cast<std::uint8_t>(q);
      }
  return img;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw DimensionError("resize_bilinear expects [C,H,W], got " + shape_str(img.shape()));
  if (out_h == 0 || out_w == 0) throw DimensionError("resize_bilinear: empty output");
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (H == out_h && W == out_w) return img;
  Tensor<T> out({C, out_h, out_w});
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const T* p = img.ptr() + c * H * W;
        const double v = (1 - wy) * ((1 - wx) * p[y0 * W + x0] + wx * p[y0 * W + x1]) +
                         wy * ((1 - wx) * p[y1 * W + x0] + wx * p[y1 * W + x1]);
        out[(c * out_h + y) * out_w + x] = static_cast<T>(v);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& img) {
  if (img.rank() != 3) throw DimensionError("hflip expects [C,H,W]");
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<T> out(img.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out[(c * H + y) * W + x] = img[(c * H + y) * W + (W - 1 - x)];
  return out;
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

template Tensor<float> to_tensor(const Image8&);
template Tensor<double> to_tensor(const Image8&);
template Image8 to_image(const Tensor<float>&);
template Image8 to_image(const Tensor<double>&);
template Tensor<float> resize_bilinear(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> resize_bilinear(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> hflip(const Tensor<float>&);
template Tensor<double> hflip(const Tensor<double>&);

}  // namespace qotr
