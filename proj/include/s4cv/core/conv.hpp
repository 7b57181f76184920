#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "s4cv/core/ops.hpp"

namespace s4cv {

struct Conv2dGeometry {
  std::int64_t batch, in_ch, height, width;
  std::int64_t out_ch, kh, kw, stride, pad;
  std::int64_t out_h, out_w;

  std::int64_t col_rows() const { return in_ch * kh * kw; }
  std::int64_t col_cols() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

namespace detail {

// Output columns whose input column lies inside the image for kernel offset kj.
inline std::pair<std::int64_t, std::int64_t> valid_range(const Conv2dGeometry& g, std::int64_t kj) {
  std::int64_t lo = 0, hi = g.out_w;
  while (lo < hi && lo * g.stride - g.pad + kj < 0) ++lo;
  while (hi > lo && (hi - 1) * g.stride - g.pad + kj >= g.width) --hi;
  return {lo, hi};
}

// Column matrix rows are (c, ki, kj) with row stride `ld`.
template <typename T>
void im2col(const T* img, const Conv2dGeometry& g, T* col, std::int64_t ld) {
  for (std::int64_t c = 0; c < g.in_ch; ++c)
    for (std::int64_t ki = 0; ki < g.kh; ++ki)
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * ld;
        const auto [lo, hi] = valid_range(g, kj);
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ki;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = img + (c * g.height + iy) * g.width;
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + g.out_w, T(0));
          if (g.stride == 1) std::copy(src + lo - g.pad + kj, src + hi - g.pad + kj, dst + lo);
          else
            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride - g.pad + kj];
        }
      }
}

template <typename T>
void col2im_add(const T* col, const Conv2dGeometry& g, T* img, std::int64_t ld) {
  for (std::int64_t c = 0; c < g.in_ch; ++c)
    for (std::int64_t ki = 0; ki < g.kh; ++ki)
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * ld;
        const auto [lo, hi] = valid_range(g, kj);
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = img + (c * g.height + iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride - g.pad + kj] += src[ox];
        }
      }
}

}  // namespace detail

// x [B,Cin,H,W], w [Cout,Cin,kh,kw], optional b [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::type_identity_t<Var<T>>* b, std::int64_t stride, std::int64_t pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4) throw DimensionError("conv2d expects 4-d input and weight");
  Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad, 0, 0};
  if (w.dim(1) != g.in_ch)
    throw DimensionError("conv2d: input channels " + std::to_string(g.in_ch) + " != weight channels " +
                         std::to_string(w.dim(1)));
  g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw DimensionError("conv2d: kernel larger than padded input");

  Tensor<T> out(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
  ConstMatMap<T> W(w.value().data(), g.out_ch, g.col_rows());
  Buffer<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  const std::int64_t in_plane = g.in_ch * g.height * g.width, out_plane = g.out_ch * g.col_cols();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    const T* src = x.value().data() + n * in_plane;
    if (!g.pointwise()) {
      detail::im2col(src, g, col.data(), g.col_cols());
      src = col.data();
    }
    MatMap<T> Y(out.data() + n * out_plane, g.out_ch, g.col_cols());
    Y.noalias() = W * ConstMatMap<T>(src, g.col_rows(), g.col_cols());
    if (b)
      for (std::int64_t o = 0; o < g.out_ch; ++o) Y.row(o).array() += b->value()[o];
  }
  std::optional<Var<T>> bias;
  if (b) bias = *b;
  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return make_result<T>(std::move(out), inputs, [x, w, bias, g, in_plane, out_plane](const Tensor<T>& gout) {
    auto* gx = grad_of(x);
    auto* gw = grad_of(w);
    auto* gb = bias ? grad_of(*bias) : nullptr;
    ConstMatMap<T> W(w.value().data(), g.out_ch, g.col_rows());
    Buffer<T> col(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    for (std::int64_t n = 0; n < g.batch; ++n) {
      ConstMatMap<T> G(gout.data() + n * out_plane, g.out_ch, g.col_cols());
      if (gb)
        for (std::int64_t o = 0; o < g.out_ch; ++o) (*gb)[o] += G.row(o).sum();
      if (gw) {
        const T* src = x.value().data() + n * in_plane;
        if (!g.pointwise()) {
          detail::im2col(src, g, col.data(), g.col_cols());
          src = col.data();
        }
        MatMap<T>(gw->data(), g.out_ch, g.col_rows()).noalias() +=
            G * ConstMatMap<T>(src, g.col_rows(), g.col_cols()).transpose();
      }
      if (gx) {
        if (g.pointwise()) {
          MatMap<T>(gx->data() + n * in_plane, g.col_rows(), g.col_cols()).noalias() += W.transpose() * G;
        } else {
          MatMap<T>(col.data(), g.col_rows(), g.col_cols()).noalias() = W.transpose() * G;
          detail::col2im_add(col.data(), g, gx->data() + n * in_plane, g.col_cols());
        }
      }
    }
  });
}

// Running statistics are owned elsewhere (a ParamStore buffer) and aliased.
template <typename T>
struct BatchNormState {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

// Per-channel normalization of [B,C,H,W]. Training mode uses batch
// statistics and updates the running estimates; eval mode uses them.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                    bool training) {
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const auto m = B * HW;
  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
  const T* xs = x.value().data();
  for (std::int64_t c = 0; c < C; ++c) {
    if (training) {
      double s = 0;
      for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t i = 0; i < HW; ++i) s += xs[(n * C + c) * HW + i];
      const double mu = s / double(m);
      double v = 0;
      for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t i = 0; i < HW; ++i) {
          const double d = xs[(n * C + c) * HW + i] - mu;
          v += d * d;
        }
      const double var = v / double(m);
      (*mean)[c] = T(mu);
      (*inv_std)[c] = T(1.0 / std::sqrt(var + double(state.eps)));
      const double unbiased = m > 1 ? v / double(m - 1) : var;
      auto& rm = *state.running_mean;
      auto& rv = *state.running_var;
      rm[c] = (T(1) - state.momentum) * rm[c] + state.momentum * T(mu);
      rv[c] = (T(1) - state.momentum) * rv[c] + state.momentum * T(unbiased);
    } else {
      (*mean)[c] = (*state.running_mean)[c];
      (*inv_std)[c] = T(1) / std::sqrt((*state.running_var)[c] + state.eps);
    }
  }
  Tensor<T> out(x.shape());
  for (std::int64_t n = 0; n < B; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T mu = (*mean)[c], inv = (*inv_std)[c], ga = gamma.value()[c], be = beta.value()[c];
      const std::int64_t base = (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) out[base + i] = (xs[base + i] - mu) * inv * ga + be;
    }
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, mean, inv_std, training, B, C, HW, m](const Tensor<T>& g) {
    auto* gx = grad_of(x);
    auto* gg = grad_of(gamma);
    auto* gb = grad_of(beta);
    const T* xs = x.value().data();
    for (std::int64_t c = 0; c < C; ++c) {
      const T mu = (*mean)[c], inv = (*inv_std)[c], ga = gamma.value()[c];
      T sum_g = 0, sum_gh = 0;
      for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t i = 0; i < HW; ++i) {
          const std::int64_t k = (n * C + c) * HW + i;
          sum_g += g[k];
          sum_gh += g[k] * (xs[k] - mu) * inv;
        }
      if (gg) (*gg)[c] += sum_gh;
      if (gb) (*gb)[c] += sum_g;
      if (!gx) continue;
      for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t i = 0; i < HW; ++i) {
          const std::int64_t k = (n * C + c) * HW + i;
          if (training) {
            const T h = (xs[k] - mu) * inv;
            (*gx)[k] += ga * inv / T(m) * (T(m) * g[k] - sum_g - h * sum_gh);
          } else {
            (*gx)[k] += ga * inv * g[k];
          }
        }
    }
  });
}

// 2x2 max pooling, stride 2. H and W must be even.
template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2)
    throw DimensionError("max_pool2x2: spatial size " + std::to_string(H) + "x" + std::to_string(W) + " is not even");
  const auto Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{B, C, Ho, Wo});
  auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
  const T* xs = x.value().data();
  for (std::int64_t p = 0; p < B * C; ++p)
    for (std::int64_t oy = 0; oy < Ho; ++oy)
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        std::int64_t best = p * H * W + (2 * oy) * W + 2 * ox;
        for (std::int64_t dy = 0; dy < 2; ++dy)
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            const std::int64_t k = p * H * W + (2 * oy + dy) * W + 2 * ox + dx;
            if (xs[k] > xs[best]) best = k;
          }
        const std::int64_t o = (p * Ho + oy) * Wo + ox;
        out[o] = xs[best];
        (*arg)[o] = best;
      }
  return make_result<T>(std::move(out), {x}, [x, arg](const Tensor<T>& g) {
    auto& gx = x.node().grad_ref();
    for (std::size_t o = 0; o < arg->size(); ++o) gx[(*arg)[o]] += g[static_cast<std::int64_t>(o)];
  });
}

// Bilinear 2x upsampling with corner alignment.
template <typename T>
Var<T> upsample_bilinear2x(const Var<T>& x) {
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Ho = 2 * H, Wo = 2 * W;
  struct Tap {
    std::int64_t lo, hi;
    T w_hi;
  };
  auto taps = [](std::int64_t in, std::int64_t out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    for (std::int64_t o = 0; o < out; ++o) {
      const double src = out > 1 ? double(o) * double(in - 1) / double(out - 1) : 0.0;
      const auto lo = static_cast<std::int64_t>(std::floor(src));
      const auto hi = std::min(lo + 1, in - 1);
      t[o] = {lo, hi, T(src - double(lo))};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(H, Ho));
  auto tx = std::make_shared<std::vector<Tap>>(taps(W, Wo));
  Tensor<T> out(Shape{B, C, Ho, Wo});
  const T* xs = x.value().data();
  for (std::int64_t p = 0; p < B * C; ++p) {
    const T* src = xs + p * H * W;
    T* dst = out.data() + p * Ho * Wo;
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      const auto& a = (*ty)[oy];
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        const auto& b = (*tx)[ox];
        const T top = src[a.lo * W + b.lo] * (T(1) - b.w_hi) + src[a.lo * W + b.hi] * b.w_hi;
        const T bot = src[a.hi * W + b.lo] * (T(1) - b.w_hi) + src[a.hi * W + b.hi] * b.w_hi;
        dst[oy * Wo + ox] = top * (T(1) - a.w_hi) + bot * a.w_hi;
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [x, ty, tx, B, C, H, W, Ho, Wo](const Tensor<T>& g) {
    auto& gx = x.node().grad_ref();
    for (std::int64_t p = 0; p < B * C; ++p) {
      T* dst = gx.data() + p * H * W;
      const T* src = g.data() + p * Ho * Wo;
      for (std::int64_t oy = 0; oy < Ho; ++oy) {
        const auto& a = (*ty)[oy];
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          const auto& b = (*tx)[ox];
          const T v = src[oy * Wo + ox];
          dst[a.lo * W + b.lo] += v * (T(1) - a.w_hi) * (T(1) - b.w_hi);
          dst[a.lo * W + b.hi] += v * (T(1) - a.w_hi) * b.w_hi;
          dst[a.hi * W + b.lo] += v * a.w_hi * (T(1) - b.w_hi);
          dst[a.hi * W + b.hi] += v * a.w_hi * b.w_hi;
        }
      }
    }
  });
}

}  // namespace s4cv
