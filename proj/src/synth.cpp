#include "qotr/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "qotr/errors.hpp"

namespace qotr {
namespace {

using Color = std::array<double, 3>;

std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Color random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  return {u(rng), u(rng), u(rng)};
}

// Smooth lattice noise in [0, 1] with cosine interpolation.
class ValueNoise {
 public:
  ValueNoise(std::size_t cells, std::mt19937_64& rng) : n_(cells + 2), v_(n_ * n_) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& x : v_) x = u(rng);
  }
  double at(double y, double x) const {
    const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
    const double ty = smooth(y - static_cast<double>(y0)), tx = smooth(x - static_cast<double>(x0));
    const double a = v_[y0 * n_ + x0], b = v_[y0 * n_ + x0 + 1];
    const double c = v_[(y0 + 1) * n_ + x0], d = v_[(y0 + 1) * n_ + x0 + 1];
    return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
  }

 private:
  static double smooth(double t) { return 0.5 - 0.5 * std::cos(t * std::numbers::pi); }
  std::size_t n_;
  std::vector<double> v_;
};

}  // namespace

SynthFamily synth_family(std::size_t index) { return static_cast<SynthFamily>(index % 4); }

Image8 synth_image(std::size_t index, std::size_t size, std::uint64_t seed) {
  if (size < 8) throw ConfigError("synthetic image size must be >= 8");
  std::mt19937_64 rng(mix(seed, index));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double S = static_cast<double>(size);
  std::vector<Color> px(size * size);

  const Color c0 = random_color(rng), c1 = random_color(rng);
  auto blend = [](const Color& a, const Color& b, double t) {
    return Color{a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
  };
  const double angle = u01(rng) * 2 * std::numbers::pi;
  const double ca = std::cos(angle), sa = std::sin(angle);
  auto gradient_t = [&](double y, double x) {
    const double d = ((x / S - 0.5) * ca + (y / S - 0.5) * sa) / std::numbers::sqrt2;
    return std::clamp(d + 0.5, 0.0, 1.0);
  };

  switch (synth_family(index)) {
    case SynthFamily::kGradient:
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) px[y * size + x] = blend(c0, c1, gradient_t(y, x));
      break;
    case SynthFamily::kStripes: {
      const int orient = static_cast<int>(rng() % 3);  // horizontal, vertical, diagonal
      const double period = S / (3.0 + std::floor(u01(rng) * 5.0));
      const double phase = u01(rng) * 2 * std::numbers::pi;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double coord = orient == 0 ? y : orient == 1 ? x : (x + y) / std::numbers::sqrt2;
          const double t = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * coord / period + phase);
          px[y * size + x] = blend(c0, c1, t);
        }
      break;
    }
    case SynthFamily::kValueNoise: {
      const std::size_t cells = 2 + rng() % 3;
      std::array<ValueNoise, 3> noise = {ValueNoise(cells, rng), ValueNoise(cells, rng), ValueNoise(cells, rng)};
      const double k = static_cast<double>(cells) / S;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          for (int c = 0; c < 3; ++c) px[y * size + x][c] = 0.1 + 0.8 * noise[c].at(y * k, x * k);
      break;
    }
    case SynthFamily::kShapes: {
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) px[y * size + x] = blend(c0, c1, gradient_t(y, x));
      const int n_shapes = 2 + static_cast<int>(rng() % 3);
      for (int s = 0; s < n_shapes; ++s) {
        const bool ellipse = rng() % 2;
        const Color col = random_color(rng);
        const double cy = u01(rng) * S, cx = u01(rng) * S;
        const double ry = (0.1 + 0.25 * u01(rng)) * S, rx = (0.1 + 0.25 * u01(rng)) * S;
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
            const bool inside = ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
            if (inside) px[y * size + x] = col;
          }
      }
      break;
    }
  }

  // Fine texture so no patch is perfectly flat.
  ValueNoise grain(size / 4, rng);
  Image8 img;
  img.height = img.width = size;
  img.rgb.resize(size * size * 3);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double g = 0.06 * (grain.at(y / 4.0, x / 4.0) - 0.5);
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(px[y * size + x][c] + g, 0.0, 1.0);
        img.rgb[(y * size + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  return img;
}

std::vector<Image8> synth_corpus(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::vector<Image8> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_image(i, size, seed));
  return out;
}

std::vector<std::filesystem::path> write_synth_corpus(const std::filesystem::path& dir, std::size_t count,
                                                      std::size_t size, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.png", i);
    paths.push_back(dir / name);
    write_png(synth_image(i, size, seed), paths.back());
  }
  return paths;
}

}  // namespace qotr
