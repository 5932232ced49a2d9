#include "qotr/metrics.hpp"

#include <cmath>

#include "qotr/errors.hpp"

namespace qotr {

double psnr(const Image8& a, const Image8& b) {
  if (a.height != b.height || a.width != b.width || a.rgb.size() != b.rgb.size()) {
    throw DimensionError("psnr: image sizes differ");
  }
  if (a.rgb.empty()) throw DimensionError("psnr: empty images");
  double se = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.rgb.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("psnr: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return psnr(to_image(a), to_image(b));
}

template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);

}  // namespace qotr
