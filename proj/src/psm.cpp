#include "qotr/psm.hpp"

#include "qotr/errors.hpp"
#include "qotr/layers.hpp"
#include "qotr/ops.hpp"

namespace qotr {

template <typename T>
PSMParams<T> PSMParams<T>::init(std::size_t dim, const GridSpec& spec, std::mt19937_64& rng) {
  return {truncated_normal<T>({dim, spec.patch_width()}, kInitStd, rng), Tensor<T>({spec.patch_width()})};
}

template <typename T>
void PSMParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "w_proj", w_proj);
  f(prefix + "b_proj", b_proj);
}

template <typename T>
void PSMParams<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  f(prefix + "w_proj", w_proj);
  f(prefix + "b_proj", b_proj);
}

OverlapMap::OverlapMap(const GridSpec& spec) : spec_(spec) {
  const RingIndex ring = ring_index(spec);
  const std::size_t cw = spec.canvas_w();
  counts_.assign(spec.canvas_h() * cw, 0);
  for (const Cell& cell : ring.cells) {
    const Rect r = patch_footprint(cell, spec);
    for (long y = r.top; y < r.bottom; ++y)
      for (long x = r.left; x < r.right; ++x) ++counts_[static_cast<std::size_t>(y) * cw + static_cast<std::size_t>(x)];
  }
  for (std::size_t y = 0; y < spec.canvas_h(); ++y)
    for (std::size_t x = 0; x < cw; ++x)
      if (!in_center(y, x) && counts_[y * cw + x] == 0) {
        throw GeometryError("ring pixel (" + std::to_string(y) + "," + std::to_string(x) +
                            ") is covered by no patch");
      }
}

bool OverlapMap::in_center(std::size_t y, std::size_t x) const {
  return y >= spec_.M && y < spec_.M + spec_.H && x >= spec_.M && x < spec_.M + spec_.W;
}

template <typename T>
Var<T> project_patches(Var<T> q, const PSMParams<T>& p) {
  Graph<T>& g = q.graph();
  return linear(q, g.param(p.w_proj), g.param(p.b_proj));
}

namespace {

// Calls f(patch_flat_index, canvas_flat_index_without_channel, channel) for
// every patch element landing on a ring pixel.
template <typename F>
void for_each_ring_placement(const GridSpec& spec, const RingIndex& ring, const OverlapMap& omap, F&& f) {
  const long e = static_cast<long>(spec.ext());
  const long ch = static_cast<long>(spec.canvas_h()), cw = static_cast<long>(spec.canvas_w());
  const std::size_t n = spec.patch_width();
  for (std::size_t s = 0; s < ring.size(); ++s) {
    const Rect r = patch_footprint_unclipped(ring.cells[s], spec);
    for (std::size_t c = 0; c < 3; ++c)
      for (long py = 0; py < e; ++py) {
        const long y = r.top + py;
        if (y < 0 || y >= ch) continue;
        for (long px = 0; px < e; ++px) {
          const long x = r.left + px;
          if (x < 0 || x >= cw) continue;
          if (omap.in_center(static_cast<std::size_t>(y), static_cast<std::size_t>(x))) continue;
          f(s * n + (c * e + py) * e + px, static_cast<std::size_t>(y * cw + x), c);
        }
      }
  }
}

}  // namespace

template <typename T>
Var<T> assemble(Var<T> x, Var<T> patches, const GridSpec& spec, const OverlapMap& omap) {
  if (!(omap.spec() == spec)) throw GeometryError("assemble: overlap map built for a different grid");
  const RingIndex ring = ring_index(spec);
  if (x.shape() != Shape{3, spec.H, spec.W}) {
    throw DimensionError("assemble: input " + shape_str(x.shape()) + " does not match grid");
  }
  if (patches.shape() != Shape{ring.size(), spec.patch_width()}) {
    throw DimensionError("assemble: patches " + shape_str(patches.shape()) + ", expected " +
                         shape_str({ring.size(), spec.patch_width()}));
  }
  const std::size_t H = spec.H, W = spec.W, M = spec.M;
  const std::size_t plane = spec.canvas_h() * spec.canvas_w();
  const std::size_t cw = spec.canvas_w();
  Tensor<T> out({3, spec.canvas_h(), spec.canvas_w()});
  const T* pp = patches.value().ptr();
  for_each_ring_placement(spec, ring, omap, [&](std::size_t pi, std::size_t pix, std::size_t c) {
    out[c * plane + pix] += pp[pi];
  });
  const auto& counts = omap.counts();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t pix = 0; pix < plane; ++pix)
      if (counts[pix] > 0) out[c * plane + pix] /= static_cast<T>(counts[pix]);
  const T* xp = x.value().ptr();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) out[c * plane + (y + M) * cw + xx + M] = xp[(c * H + y) * W + xx];

  const std::size_t ix = x.id(), ip = patches.id();
  return x.graph().record(
      std::move(out), {x, patches}, [=](Tape<T>& tape, std::size_t self) {
        const T* g = tape.grad(self).ptr();
        if (tape.requires_grad(ip)) {
          T* gp = tape.grad_buffer(ip).ptr();
          const auto& counts = omap.counts();
          for_each_ring_placement(spec, ring, omap, [&](std::size_t pi, std::size_t pix, std::size_t c) {
            gp[pi] += g[c * plane + pix] / static_cast<T>(counts[pix]);
          });
        }
        if (tape.requires_grad(ix)) {
          T* gx = tape.grad_buffer(ix).ptr();
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < H; ++y)
              for (std::size_t xx = 0; xx < W; ++xx) gx[(c * H + y) * W + xx] += g[c * plane + (y + M) * cw + xx + M];
        }
      });
}

template <typename T>
Tensor<T> disassemble_targets(const Tensor<T>& y, const GridSpec& spec) {
  if (y.shape() != Shape{3, spec.canvas_h(), spec.canvas_w()}) {
    throw DimensionError("disassemble_targets: image " + shape_str(y.shape()) + " does not match canvas " +
                         shape_str({3, spec.canvas_h(), spec.canvas_w()}));
  }
  const RingIndex ring = ring_index(spec);
  const long e = static_cast<long>(spec.ext());
  const long ch = static_cast<long>(spec.canvas_h()), cw = static_cast<long>(spec.canvas_w());
  const std::size_t n = spec.patch_width();
  Tensor<T> out({ring.size(), n});
  for (std::size_t s = 0; s < ring.size(); ++s) {
    const Rect r = patch_footprint_unclipped(ring.cells[s], spec);
    for (long c = 0; c < 3; ++c)
      for (long py = 0; py < e; ++py) {
        const long yy = r.top + py;
        if (yy < 0 || yy >= ch) continue;
        for (long px = 0; px < e; ++px) {
          const long xx = r.left + px;
          if (xx < 0 || xx >= cw) continue;
          out[s * n + static_cast<std::size_t>((c * e + py) * e + px)] = y[static_cast<std::size_t>((c * ch + yy) * cw + xx)];
        }
      }
  }
  return out;
}

template <typename T>
Tensor<T> center_crop(const Tensor<T>& canvas, const GridSpec& spec) {
  if (canvas.shape() != Shape{3, spec.canvas_h(), spec.canvas_w()}) {
    throw DimensionError("center_crop: image " + shape_str(canvas.shape()) + " does not match canvas " +
                         shape_str({3, spec.canvas_h(), spec.canvas_w()}));
  }
  Tensor<T> out({3, spec.H, spec.W});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < spec.H; ++y)
      for (std::size_t x = 0; x < spec.W; ++x) out.at(c, y, x) = canvas.at(c, y + spec.M, x + spec.M);
  return out;
}

#define QOTR_INSTANTIATE_PSM(T)                                                            \
  template struct PSMParams<T>;                                                            \
  template Var<T> project_patches(Var<T>, const PSMParams<T>&);                            \
  template Var<T> assemble(Var<T>, Var<T>, const GridSpec&, const OverlapMap&);            \
  template Tensor<T> disassemble_targets(const Tensor<T>&, const GridSpec&);               \
  template Tensor<T> center_crop(const Tensor<T>&, const GridSpec&);

QOTR_INSTANTIATE_PSM(float)
QOTR_INSTANTIATE_PSM(double)

}  // namespace qotr
