#include "qotr/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qotr/errors.hpp"

namespace qotr {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;
template <typename T>
using MMap = Eigen::Map<MatR<T>>;

// Index plan for a broadcast binary op. Strides are expressed in the output
// rank, with 0 on broadcast axes.
struct BroadcastPlan {
  enum class Kind { kSame, kScalarB, kSuffixB, kGeneral };
  Kind kind = Kind::kGeneral;
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
};

std::vector<std::size_t> aligned_strides(const Shape& s, std::size_t rank) {
  std::vector<std::size_t> strides(rank, 0);
  std::size_t acc = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t axis = s.size() - 1 - i;
    std::size_t out_axis = rank - 1 - i;
    strides[out_axis] = s[axis] == 1 ? 0 : acc;
    acc *= s[axis];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  const std::size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
  }
  if (a == b) {
    p.kind = BroadcastPlan::Kind::kSame;
  } else if (shape_numel(b) == 1 && p.out == a) {
    p.kind = BroadcastPlan::Kind::kScalarB;
  } else if (p.out == a && b.size() <= a.size() &&
             std::equal(b.begin(), b.end(), a.end() - static_cast<long>(b.size()))) {
    p.kind = BroadcastPlan::Kind::kSuffixB;
  }
  p.stride_a = aligned_strides(a, rank);
  p.stride_b = aligned_strides(b, rank);
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, std::size_t nb, F&& f) {
  const std::size_t n = shape_numel(p.out);
  switch (p.kind) {
    case BroadcastPlan::Kind::kSame:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    case BroadcastPlan::Kind::kScalarB:
      for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
      return;
    case BroadcastPlan::Kind::kSuffixB:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i % nb);
      return;
    case BroadcastPlan::Kind::kGeneral:
      break;
  }
  const std::size_t rank = p.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * idx[ax];
      ib -= p.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

template <typename T>
Var<T> binary(Var<T> a, Var<T> b, BinOp op) {
  const auto& av = a.value();
  const auto& bv = b.value();
  BroadcastPlan plan = plan_broadcast(av.shape(), bv.shape());
  Tensor<T> out(plan.out);
  const T* pa = av.ptr();
  const T* pb = bv.ptr();
  T* po = out.ptr();
  const std::size_t nb = bv.numel();
  switch (op) {
    case BinOp::kAdd:
      for_each_broadcast(plan, nb, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] + pb[j]; });
      break;
    case BinOp::kSub:
      for_each_broadcast(plan, nb, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] - pb[j]; });
      break;
    case BinOp::kMul:
      for_each_broadcast(plan, nb, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] * pb[j]; });
      break;
    case BinOp::kDiv:
      for_each_broadcast(plan, nb, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] / pb[j]; });
      break;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(
      std::move(out), {a, b},
      [ia, ib, nb, op, plan = std::move(plan)](Tape<T>& tape, std::size_t self) {
        const T* g = tape.grad(self).ptr();
        const T* pa = tape.value(ia).ptr();
        const T* pb = tape.value(ib).ptr();
        const bool need_a = tape.requires_grad(ia);
        const bool need_b = tape.requires_grad(ib);
        T* ga = need_a ? tape.grad_buffer(ia).ptr() : nullptr;
        T* gb = need_b ? tape.grad_buffer(ib).ptr() : nullptr;
        for_each_broadcast(plan, nb, [&](std::size_t o, std::size_t i, std::size_t j) {
          switch (op) {
            case BinOp::kAdd:
              if (ga) ga[i] += g[o];
              if (gb) gb[j] += g[o];
              break;
            case BinOp::kSub:
              if (ga) ga[i] += g[o];
              if (gb) gb[j] -= g[o];
              break;
            case BinOp::kMul:
              if (ga) ga[i] += g[o] * pb[j];
              if (gb) gb[j] += g[o] * pa[i];
              break;
            case BinOp::kDiv:
              if (ga) ga[i] += g[o] / pb[j];
              if (gb) gb[j] -= g[o] * pa[i] / (pb[j] * pb[j]);
              break;
          }
        });
      });
}

// Elementwise unary op with derivative expressed in terms of input x and
// output y.
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(Var<T> x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x}, [ix, deriv](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto& xv = tape.value(ix);
    const auto& yv = tape.value(self);
    auto& gx = tape.grad_buffer(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

std::size_t batch_count(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) n *= s[i];
  return n;
}

template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho,
            std::size_t wo, T* cols) {
  const std::size_t hw = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = cols + ((ch * kh + i) * kw + j) * hw;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
            row[oy * wo + ox] = (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 &&
                                 ix < static_cast<long>(w))
                                    ? x[(ch * h + iy) * w + ix]
                                    : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho,
            std::size_t wo, T* gx) {
  const std::size_t hw = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const T* row = cols + ((ch * kh + i) * kw + j) * hw;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            gx[(ch * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

struct ConvGeom {
  std::size_t b, c, h, w, o, kh, kw, ho, wo;
};

template <typename T>
ConvGeom conv_geom(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                   std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw DimensionError("conv2d expects x [B,C,H,W] and w [O,C,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("conv2d channel mismatch: x " + shape_str(x.shape()) + ", w " +
                         shape_str(w.shape()));
  }
  if (bias.numel() != w.dim(0)) {
    throw DimensionError("conv2d bias " + shape_str(bias.shape()) + " for weight " +
                         shape_str(w.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d stride must be >= 1");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0};
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw DimensionError("conv2d kernel " + shape_str(w.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
  }
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

}  // namespace

template <typename T>
T bilinear_at(const T* plane, std::size_t h, std::size_t w, T y, T x) {
  const T fy = std::floor(y);
  const T fx = std::floor(x);
  const long y0 = static_cast<long>(fy);
  const long x0 = static_cast<long>(fx);
  const T ly = y - fy;
  const T lx = x - fx;
  auto px = [&](long yy, long xx) -> T {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return T(0);
    return plane[yy * static_cast<long>(w) + xx];
  };
  return (1 - ly) * (1 - lx) * px(y0, x0) + (1 - ly) * lx * px(y0, x0 + 1) +
         ly * (1 - lx) * px(y0 + 1, x0) + ly * lx * px(y0 + 1, x0 + 1);
}

namespace {

// Scatters g into the four bilinear neighbours of (y, x) and returns the
// derivative of the sampled value with respect to (y, x).
template <typename T>
std::pair<T, T> bilinear_backward(const T* plane, T* gplane, std::size_t h, std::size_t w,
                                  T y, T x, T g) {
  const T fy = std::floor(y);
  const T fx = std::floor(x);
  const long y0 = static_cast<long>(fy);
  const long x0 = static_cast<long>(fx);
  const T ly = y - fy;
  const T lx = x - fx;
  auto inside = [&](long yy, long xx) {
    return yy >= 0 && xx >= 0 && yy < static_cast<long>(h) && xx < static_cast<long>(w);
  };
  auto px = [&](long yy, long xx) -> T {
    return inside(yy, xx) ? plane[yy * static_cast<long>(w) + xx] : T(0);
  };
  auto put = [&](long yy, long xx, T v) {
    if (gplane && inside(yy, xx)) gplane[yy * static_cast<long>(w) + xx] += v;
  };
  put(y0, x0, g * (1 - ly) * (1 - lx));
  put(y0, x0 + 1, g * (1 - ly) * lx);
  put(y0 + 1, x0, g * ly * (1 - lx));
  put(y0 + 1, x0 + 1, g * ly * lx);
  const T v00 = px(y0, x0), v01 = px(y0, x0 + 1), v10 = px(y0 + 1, x0), v11 = px(y0 + 1, x0 + 1);
  const T dy = (1 - lx) * (v10 - v00) + lx * (v11 - v01);
  const T dx = (1 - ly) * (v01 - v00) + ly * (v11 - v10);
  return {dy, dx};
}

}  // namespace

template <typename T> Var<T> add(Var<T> a, Var<T> b) { return binary(a, b, BinOp::kAdd); }
template <typename T> Var<T> sub(Var<T> a, Var<T> b) { return binary(a, b, BinOp::kSub); }
template <typename T> Var<T> mul(Var<T> a, Var<T> b) { return binary(a, b, BinOp::kMul); }
template <typename T> Var<T> div(Var<T> a, Var<T> b) { return binary(a, b, BinOp::kDiv); }

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
  return unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  return unary(
      x, [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  return unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(c * (v + k * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
      });
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const auto& xv = x.value();
  T s = 0;
  for (T v : xv.data()) s += v;
  const std::size_t ix = x.id();
  return x.graph().record(Tensor<T>::scalar(s), {x}, [ix](Tape<T>& tape, std::size_t self) {
    const T g = tape.grad(self)[0];
    auto& gx = tape.grad_buffer(ix);
    for (auto& v : gx.data()) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.numel();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  MMap<T>(out.ptr(), a.dim(0), b.dim(1)).noalias() =
      CMap<T>(a.ptr(), a.dim(0), a.dim(1)) * CMap<T>(b.ptr(), b.dim(0), b.dim(1));
  return out;
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() < 2 || bv.rank() < 2 || av.shape()[av.rank() - 1] != bv.shape()[bv.rank() - 2]) {
    throw DimensionError("matmul shape mismatch: " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.shape()[av.rank() - 2];
  const std::size_t k = av.shape()[av.rank() - 1];
  const std::size_t n = bv.shape()[bv.rank() - 1];
  Shape batch_a(av.shape().begin(), av.shape().end() - 2);
  Shape batch_b(bv.shape().begin(), bv.shape().end() - 2);
  BroadcastPlan plan;
  try {
    plan = plan_broadcast(batch_a, batch_b);
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch mismatch: " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  plan.kind = BroadcastPlan::Kind::kGeneral;
  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  const T* pa = av.ptr();
  const T* pb = bv.ptr();
  T* po = out.ptr();
  for_each_broadcast(plan, 0, [&](std::size_t o, std::size_t i, std::size_t j) {
    MMap<T>(po + o * m * n, m, n).noalias() =
        CMap<T>(pa + i * m * k, m, k) * CMap<T>(pb + j * k * n, k, n);
  });
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(
      std::move(out), {a, b},
      [ia, ib, m, k, n, plan = std::move(plan)](Tape<T>& tape, std::size_t self) {
        const T* g = tape.grad(self).ptr();
        const T* pa = tape.value(ia).ptr();
        const T* pb = tape.value(ib).ptr();
        T* ga = tape.requires_grad(ia) ? tape.grad_buffer(ia).ptr() : nullptr;
        T* gb = tape.requires_grad(ib) ? tape.grad_buffer(ib).ptr() : nullptr;
        for_each_broadcast(plan, 0, [&](std::size_t o, std::size_t i, std::size_t j) {
          CMap<T> gm(g + o * m * n, m, n);
          if (ga) MMap<T>(ga + i * m * k, m, k).noalias() += gm * CMap<T>(pb + j * k * n, k, n).transpose();
          if (gb) MMap<T>(gb + j * k * n, k, n).noalias() += CMap<T>(pa + i * m * k, m, k).transpose() * gm;
        });
      });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add(matmul(x, w), b);
}

template <typename T>
Var<T> transpose(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(xv.shape()));
  Shape s = xv.shape();
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  const std::size_t nb = batch_count(xv.shape());
  Tensor<T> out(s);
  for (std::size_t b = 0; b < nb; ++b) {
    MMap<T>(out.ptr() + b * r * c, c, r) = CMap<T>(xv.ptr() + b * r * c, r, c).transpose();
  }
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x}, [ix, r, c, nb](Tape<T>& tape, std::size_t self) {
    const T* g = tape.grad(self).ptr();
    T* gx = tape.grad_buffer(ix).ptr();
    for (std::size_t b = 0; b < nb; ++b) {
      MMap<T>(gx + b * r * c, r, c) += CMap<T>(g + b * r * c, c, r).transpose();
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const std::size_t ix = x.id();
  return x.graph().record(x.value().reshaped(std::move(shape)), {x},
                          [ix](Tape<T>& tape, std::size_t self) {
                            const auto& g = tape.grad(self);
                            auto& gx = tape.grad_buffer(ix);
                            for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                          });
}

template <typename T>
Var<T> slice_last(Var<T> x, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  if (xv.rank() == 0 || begin >= end || end > xv.shape().back()) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_str(xv.shape()));
  }
  const std::size_t width = xv.shape().back();
  const std::size_t rows = xv.numel() / width;
  const std::size_t n = end - begin;
  Shape s = xv.shape();
  s.back() = n;
  Tensor<T> out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.ptr() + r * width + begin, n, out.ptr() + r * n);
  }
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x},
                          [ix, rows, width, begin, n](Tape<T>& tape, std::size_t self) {
                            const T* g = tape.grad(self).ptr();
                            T* gx = tape.grad_buffer(ix).ptr();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < n; ++c) gx[r * width + begin + c] += g[r * n + c];
                            }
                          });
}

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape s = parts[0].shape();
  if (s.empty()) throw DimensionError("concat_last of scalars");
  const std::size_t rows = parts[0].numel() / s.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != s.size() || !std::equal(ps.begin(), ps.end() - 1, s.begin())) {
      throw DimensionError("concat_last mismatch: " + shape_str(s) + " vs " + shape_str(ps));
    }
    widths.push_back(ps.back());
    total += ps.back();
  }
  s.back() = total;
  Tensor<T> out(s);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src + r * widths[k], widths[k], out.ptr() + r * total + off);
    }
    off += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].graph().record(
      std::move(out), parts, [ids, widths, rows, total](Tape<T>& tape, std::size_t self) {
        const T* g = tape.grad(self).ptr();
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (tape.requires_grad(ids[k])) {
            T* gx = tape.grad_buffer(ids[k]).ptr();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < widths[k]; ++c) gx[r * widths[k] + c] += g[r * total + off + c];
            }
          }
          off += widths[k];
        }
      });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape s = parts[0].shape();
  if (s.empty()) throw DimensionError("concat_rows of scalars");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != s.size() || !std::equal(ps.begin() + 1, ps.end(), s.begin() + 1)) {
      throw DimensionError("concat_rows mismatch: " + shape_str(s) + " vs " + shape_str(ps));
    }
    rows += ps[0];
  }
  s[0] = rows;
  Tensor<T> out(s);
  std::vector<std::size_t> ids, sizes;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().ptr(), p.numel(), out.ptr() + off);
    off += p.numel();
    ids.push_back(p.id());
    sizes.push_back(p.numel());
  }
  return parts[0].graph().record(std::move(out), parts, [ids, sizes](Tape<T>& tape, std::size_t self) {
    const T* g = tape.grad(self).ptr();
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tape.requires_grad(ids[k])) {
        T* gx = tape.grad_buffer(ids[k]).ptr();
        for (std::size_t i = 0; i < sizes[k]; ++i) gx[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
}

template <typename T>
Var<T> gather(Var<T> x, const std::vector<std::int64_t>& index, Shape out_shape) {
  if (shape_numel(out_shape) != index.size()) {
    throw DimensionError("gather: " + std::to_string(index.size()) + " indices for shape " +
                         shape_str(out_shape));
  }
  const auto& xv = x.value();
  Tensor<T> out(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::int64_t j = index[i];
    if (j >= static_cast<std::int64_t>(xv.numel())) {
      throw DimensionError("gather index " + std::to_string(j) + " out of range for " +
                           shape_str(xv.shape()));
    }
    out[i] = j < 0 ? T(0) : xv[static_cast<std::size_t>(j)];
  }
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x}, [ix, index](Tape<T>& tape, std::size_t self) {
    const T* g = tape.grad(self).ptr();
    T* gx = tape.grad_buffer(ix).ptr();
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= 0) gx[index[i]] += g[i];
    }
  });
}

template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() == 0 || xv.shape().back() == 0) {
    throw DimensionError("softmax over empty last axis: " + shape_str(xv.shape()));
  }
  if (!all_finite(xv)) throw NumericError("softmax input contains non-finite values");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.numel() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.ptr() + r * n;
    T* o = out.ptr() + r * n;
    const T mx = *std::max_element(in, in + n);
    T z = 0;
    for (std::size_t i = 0; i < n; ++i) z += (o[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < n; ++i) o[i] /= z;
  }
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x}, [ix, n, rows](Tape<T>& tape, std::size_t self) {
    const T* g = tape.grad(self).ptr();
    const T* y = tape.value(self).ptr();
    T* gx = tape.grad_buffer(ix).ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * y[r * n + i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += y[r * n + i] * (g[r * n + i] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("layer_norm of a scalar");
  const std::size_t n = xv.shape().back();
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm affine " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " for input " + shape_str(xv.shape()));
  }
  if (!(eps > 0)) throw ContractError("layer_norm eps must be positive");
  const std::size_t rows = xv.numel() / n;
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  Tensor<T> out(xv.shape());
  AlignedVector<T> xhat(xv.numel());
  AlignedVector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.ptr() + r * n;
    T mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += in[i];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      xhat[r * n + i] = (in[i] - mu) * rstd[r];
      out[r * n + i] = gp[i] * xhat[r * n + i] + bp[i];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& tape,
                                                                             std::size_t self) {
        const T* g = tape.grad(self).ptr();
        const T* gp = tape.value(ig).ptr();
        if (tape.requires_grad(ig)) {
          T* gg = tape.grad_buffer(ig).ptr();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < n; ++i) gg[i] += g[r * n + i] * xhat[r * n + i];
        }
        if (tape.requires_grad(ib)) {
          T* gb = tape.grad_buffer(ib).ptr();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[r * n + i];
        }
        if (tape.requires_grad(ix)) {
          T* gx = tape.grad_buffer(ix).ptr();
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t i = 0; i < n; ++i) {
              const T d = g[r * n + i] * gp[i];
              m1 += d;
              m2 += d * xhat[r * n + i];
            }
            m1 /= static_cast<T>(n);
            m2 /= static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) {
              const T d = g[r * n + i] * gp[i];
              gx[r * n + i] += rstd[r] * (d - m1 - xhat[r * n + i] * m2);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  const ConvGeom g = conv_geom(x, w, bias, stride, pad);
  const std::size_t ck = g.c * g.kh * g.kw;
  const std::size_t hw = g.ho * g.wo;
  Tensor<T> out({g.b, g.o, g.ho, g.wo});
  AlignedVector<T> cols(ck * hw);
  for (std::size_t b = 0; b < g.b; ++b) {
    im2col(x.ptr() + b * g.c * g.h * g.w, g.c, g.h, g.w, g.kh, g.kw, stride, pad, g.ho, g.wo,
           cols.data());
    MMap<T> o(out.ptr() + b * g.o * hw, g.o, hw);
    o.noalias() = CMap<T>(w.ptr(), g.o, ck) * CMap<T>(cols.data(), ck, hw);
    for (std::size_t oc = 0; oc < g.o; ++oc) o.row(oc).array() += bias[oc];
  }
  return out;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad) {
  const ConvGeom g = conv_geom(x.value(), w.value(), bias.value(), stride, pad);
  Tensor<T> out = conv2d(x.value(), w.value(), bias.value(), stride, pad);
  const std::size_t ix = x.id(), iw = w.id(), ibias = bias.id();
  return x.graph().record(
      std::move(out), {x, w, bias}, [ix, iw, ibias, g, stride, pad](Tape<T>& tape, std::size_t self) {
        const T* gout = tape.grad(self).ptr();
        const T* xp = tape.value(ix).ptr();
        const T* wp = tape.value(iw).ptr();
        const std::size_t ck = g.c * g.kh * g.kw;
        const std::size_t hw = g.ho * g.wo;
        T* gw = tape.requires_grad(iw) ? tape.grad_buffer(iw).ptr() : nullptr;
        T* gb = tape.requires_grad(ibias) ? tape.grad_buffer(ibias).ptr() : nullptr;
        T* gx = tape.requires_grad(ix) ? tape.grad_buffer(ix).ptr() : nullptr;
        AlignedVector<T> cols(ck * hw);
        for (std::size_t b = 0; b < g.b; ++b) {
          CMap<T> go(gout + b * g.o * hw, g.o, hw);
          if (gb) {
            for (std::size_t oc = 0; oc < g.o; ++oc) gb[oc] += go.row(oc).sum();
          }
          if (gw) {
            im2col(xp + b * g.c * g.h * g.w, g.c, g.h, g.w, g.kh, g.kw, stride, pad, g.ho, g.wo,
                   cols.data());
            MMap<T>(gw, g.o, ck).noalias() += go * CMap<T>(cols.data(), ck, hw).transpose();
          }
          if (gx) {
            MMap<T>(cols.data(), ck, hw).noalias() = CMap<T>(wp, g.o, ck).transpose() * go;
            col2im(cols.data(), g.c, g.h, g.w, g.kh, g.kw, stride, pad, g.ho, g.wo,
                   gx + b * g.c * g.h * g.w);
          }
        }
      });
}

template <typename T>
Var<T> avg_pool2(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw DimensionError("avg_pool2 needs rank >= 2");
  const std::size_t h = xv.shape()[xv.rank() - 2], w = xv.shape()[xv.rank() - 1];
  const std::size_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw DimensionError("avg_pool2 input too small: " + shape_str(xv.shape()));
  const std::size_t planes = xv.numel() / (h * w);
  Shape s = xv.shape();
  s[s.size() - 2] = ho;
  s[s.size() - 1] = wo;
  Tensor<T> out(s);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = xv.ptr() + p * h * w;
    T* o = out.ptr() + p * ho * wo;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx)
        o[y * wo + xx] = T(0.25) * (in[2 * y * w + 2 * xx] + in[2 * y * w + 2 * xx + 1] +
                                   in[(2 * y + 1) * w + 2 * xx] + in[(2 * y + 1) * w + 2 * xx + 1]);
  }
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x}, [ix, planes, h, w, ho, wo](Tape<T>& tape, std::size_t self) {
    const T* g = tape.grad(self).ptr();
    T* gx = tape.grad_buffer(ix).ptr();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const T v = T(0.25) * g[p * ho * wo + y * wo + xx];
          T* base = gx + p * h * w;
          base[2 * y * w + 2 * xx] += v;
          base[2 * y * w + 2 * xx + 1] += v;
          base[(2 * y + 1) * w + 2 * xx] += v;
          base[(2 * y + 1) * w + 2 * xx + 1] += v;
        }
    }
  });
}

template <typename T>
Var<T> bilinear_sample(Var<T> x, Var<T> point) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw DimensionError("bilinear_sample expects [C,H,W], got " + shape_str(xv.shape()));
  if (point.numel() != 2) throw DimensionError("bilinear_sample point must hold (px, py)");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const T px = point.value()[0], py = point.value()[1];
  Tensor<T> out({c});
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] = bilinear_at(xv.ptr() + ch * h * w, h, w, py, px);
  const std::size_t ix = x.id(), ip = point.id();
  return x.graph().record(std::move(out), {x, point}, [ix, ip, c, h, w](Tape<T>& tape, std::size_t self) {
    const T* g = tape.grad(self).ptr();
    const T* xp = tape.value(ix).ptr();
    const T px = tape.value(ip)[0], py = tape.value(ip)[1];
    T* gx = tape.requires_grad(ix) ? tape.grad_buffer(ix).ptr() : nullptr;
    T gpx = 0, gpy = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto [dy, dx] = bilinear_backward(xp + ch * h * w, gx ? gx + ch * h * w : nullptr, h, w, py, px, g[ch]);
      gpy += g[ch] * dy;
      gpx += g[ch] * dx;
    }
    if (tape.requires_grad(ip)) {
      auto& gp = tape.grad_buffer(ip);
      gp[0] += gpx;
      gp[1] += gpy;
    }
  });
}

template <typename T>
Var<T> deformable_conv2d(Var<T> x, Var<T> offsets, Var<T> w, Var<T> bias) {
  const auto& xv = x.value();
  const auto& ov = offsets.value();
  const auto& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0)) {
    throw DimensionError("deformable_conv2d: x " + shape_str(xv.shape()) + ", w " +
                         shape_str(wv.shape()));
  }
  const std::size_t c = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const std::size_t o = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("deformable_conv2d needs odd kernels");
  const std::size_t taps = kh * kw;
  if (ov.shape() != Shape{2 * taps, h, wd}) {
    throw DimensionError("deformable_conv2d offsets " + shape_str(ov.shape()) + " for input " +
                         shape_str(xv.shape()) + " and kernel " + shape_str(wv.shape()));
  }
  if (bias.numel() != o) throw DimensionError("deformable_conv2d bias size");
  const std::size_t hw = h * wd;
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);

  // Sampling positions are shared by all channels.
  AlignedVector<T> sy(taps * hw), sx(taps * hw);
  for (std::size_t t = 0; t < taps; ++t) {
    const long i = static_cast<long>(t / kw), j = static_cast<long>(t % kw);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < wd; ++xx) {
        const std::size_t l = y * wd + xx;
        sy[t * hw + l] = static_cast<T>(static_cast<long>(y) - ph + i) + ov[(2 * t) * hw + l];
        sx[t * hw + l] = static_cast<T>(static_cast<long>(xx) - pw + j) + ov[(2 * t + 1) * hw + l];
      }
  }
  AlignedVector<T> cols(c * taps * hw);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < taps; ++t)
      for (std::size_t l = 0; l < hw; ++l)
        cols[(ch * taps + t) * hw + l] = bilinear_at(xv.ptr() + ch * hw, h, wd, sy[t * hw + l], sx[t * hw + l]);

  Tensor<T> out({o, h, wd});
  MMap<T> om(out.ptr(), o, hw);
  om.noalias() = CMap<T>(wv.ptr(), o, c * taps) * CMap<T>(cols.data(), c * taps, hw);
  for (std::size_t oc = 0; oc < o; ++oc) om.row(oc).array() += bias.value()[oc];

  const std::size_t ix = x.id(), io = offsets.id(), iw = w.id(), ibias = bias.id();
  return x.graph().record(
      std::move(out), {x, offsets, w, bias},
      [=, sy = std::move(sy), sx = std::move(sx), cols = std::move(cols)](Tape<T>& tape, std::size_t self) {
        CMap<T> go(tape.grad(self).ptr(), o, hw);
        const std::size_t ck = c * taps;
        if (tape.requires_grad(ibias)) {
          T* gb = tape.grad_buffer(ibias).ptr();
          for (std::size_t oc = 0; oc < o; ++oc) gb[oc] += go.row(oc).sum();
        }
        if (tape.requires_grad(iw)) {
          MMap<T>(tape.grad_buffer(iw).ptr(), o, ck).noalias() += go * CMap<T>(cols.data(), ck, hw).transpose();
        }
        const bool need_x = tape.requires_grad(ix);
        const bool need_off = tape.requires_grad(io);
        if (!need_x && !need_off) return;
        MatR<T> gcols = CMap<T>(tape.value(iw).ptr(), o, ck).transpose() * go;
        const T* xp = tape.value(ix).ptr();
        T* gx = need_x ? tape.grad_buffer(ix).ptr() : nullptr;
        T* goff = need_off ? tape.grad_buffer(io).ptr() : nullptr;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t t = 0; t < taps; ++t)
            for (std::size_t l = 0; l < hw; ++l) {
              const T gv = gcols(ch * taps + t, l);
              if (gv == T(0)) continue;
              auto [dy, dx] = bilinear_backward(xp + ch * hw, gx ? gx + ch * hw : nullptr, h, wd,
                                                sy[t * hw + l], sx[t * hw + l], gv);
              if (goff) {
                goff[(2 * t) * hw + l] += gv * dy;
                goff[(2 * t + 1) * hw + l] += gv * dx;
              }
            }
      });
}

#define QOTR_INSTANTIATE_OPS(T)                                                          \
  template Var<T> add(Var<T>, Var<T>);                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                   \
  template Var<T> div(Var<T>, Var<T>);                                                   \
  template Var<T> scale(Var<T>, T);                                                      \
  template Var<T> add_scalar(Var<T>, T);                                                 \
  template Var<T> relu(Var<T>);                                                          \
  template Var<T> leaky_relu(Var<T>, T);                                                 \
  template Var<T> gelu(Var<T>);                                                          \
  template Var<T> square(Var<T>);                                                        \
  template Var<T> sum(Var<T>);                                                           \
  template Var<T> mean(Var<T>);                                                          \
  template Var<T> matmul(Var<T>, Var<T>);                                                \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                        \
  template Var<T> transpose(Var<T>);                                                     \
  template Var<T> reshape(Var<T>, Shape);                                                \
  template Var<T> slice_last(Var<T>, std::size_t, std::size_t);                          \
  template Var<T> concat_last(const std::vector<Var<T>>&);                               \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                               \
  template Var<T> gather(Var<T>, const std::vector<std::int64_t>&, Shape);               \
  template Var<T> softmax_lastdim(Var<T>);                                               \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                 \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);              \
  template Var<T> avg_pool2(Var<T>);                                                     \
  template Var<T> bilinear_sample(Var<T>, Var<T>);                                       \
  template Var<T> deformable_conv2d(Var<T>, Var<T>, Var<T>, Var<T>);                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                            std::size_t, std::size_t);                                   \
  template T bilinear_at(const T*, std::size_t, std::size_t, T, T);

QOTR_INSTANTIATE_OPS(float)
QOTR_INSTANTIATE_OPS(double)

}  // namespace qotr
