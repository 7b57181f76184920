#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "s4cv/core/autograd.hpp"

namespace s4cv {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

using IndexList = std::shared_ptr<const std::vector<std::int64_t>>;

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> v = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(v), {x}, [x](const Tensor<T>& g) {
    auto& gx = x.node().grad_ref();
    for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const auto n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    for (const auto* v : {&a, &b})
      if (auto* gv = grad_of(*v))
        for (std::int64_t i = 0; i < g.numel(); ++i) (*gv)[i] += g[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = s * x.value()[i];
  return make_result<T>(std::move(out), {x}, [x, s](const Tensor<T>& g) {
    auto& gx = x.node().grad_ref();
    for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += s * g[i];
  });
}

// sum_i w_i * x_i over scalars (any shape with one element).
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const std::vector<T>& w) {
  if (xs.size() != w.size()) throw ArgumentError("weighted_sum: term/weight count mismatch");
  T total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) total += w[i] * xs[i].item();
  Tensor<T> out(Shape{}, total);
  return make_result<T>(std::move(out), xs, [xs, w](const Tensor<T>& g) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (auto* gx = grad_of(xs[i])) (*gx)[0] += w[i] * g[0];
  });
}

// y = x W + b with x [..., in], W [in, out], b [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const std::type_identity_t<Var<T>>* b = nullptr) {
  const auto in = w.dim(0), out_dim = w.dim(1);
  if (x.dim(-1) != in)
    throw DimensionError("linear: input dim " + std::to_string(x.dim(-1)) + " != weight rows " + std::to_string(in));
  const auto rows = x.numel() / in;
  Shape os = x.shape();
  os.back() = out_dim;
  Tensor<T> out(os);
  MatMap<T> Y(out.data(), rows, out_dim);
  ConstMatMap<T> X(x.value().data(), rows, in), W(w.value().data(), in, out_dim);
  Y.noalias() = X * W;
  std::optional<Var<T>> bias;
  if (b) {
    bias = *b;
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(b->value().data(), out_dim);
    Y.rowwise() += B;
  }
  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return make_result<T>(std::move(out), inputs, [x, w, bias, rows, in, out_dim](const Tensor<T>& g) {
    ConstMatMap<T> G(g.data(), rows, out_dim);
    if (auto* gx = grad_of(x)) {
      MatMap<T> GX(gx->data(), rows, in);
      GX.noalias() += G * ConstMatMap<T>(w.value().data(), in, out_dim).transpose();
    }
    if (auto* gw = grad_of(w)) {
      MatMap<T> GW(gw->data(), in, out_dim);
      GW.noalias() += ConstMatMap<T>(x.value().data(), rows, in).transpose() * G;
    }
    if (bias)
      if (auto* gb = grad_of(*bias)) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(gb->data(), out_dim);
        GB += G.colwise().sum();
      }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const T r2 = T(1) / std::sqrt(T(2));
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const T v = x.value()[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * r2));
  }
  return make_result<T>(std::move(out), {x}, [x, r2](const Tensor<T>& g) {
    auto& gx = x.node().grad_ref();
    const T c = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const T v = x.value()[i];
      gx[i] += g[i] * (T(0.5) * (T(1) + std::erf(v * r2)) + v * c * std::exp(T(-0.5) * v * v));
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  T* o = out.data();
  for (std::int64_t i = 0, n = out.numel(); i < n; ++i) o[i] = xv[i] > 0 ? xv[i] : slope * xv[i];
  return make_result<T>(std::move(out), {x}, [x, slope](const Tensor<T>& g) {
    T* gx = x.node().grad_ref().data();
    const T* v = x.value().data();
    const T* gp = g.data();
    for (std::int64_t i = 0, n = g.numel(); i < n; ++i) gx[i] += v[i] > 0 ? gp[i] : slope * gp[i];
  });
}

// Normalizes over the last axis.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const auto c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) throw DimensionError("layer_norm: affine size mismatch");
  const auto rows = x.numel() / c;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  const T* xs = x.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xs + r * c;
    T mean = 0;
    for (std::int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= T(c);
    T var = 0;
    for (std::int64_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(c);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::int64_t j = 0; j < c; ++j) {
      const T h = (row[j] - mean) * inv;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, rows, c](const Tensor<T>& g) {
    auto* gx = grad_of(x);
    auto* gg = grad_of(gamma);
    auto* gb = grad_of(beta);
    std::vector<T> dh(static_cast<std::size_t>(c));
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* gr = g.data() + r * c;
      const T* hr = xhat->data() + r * c;
      T sum_dh = 0, sum_dh_h = 0;
      for (std::int64_t j = 0; j < c; ++j) {
        if (gg) (*gg)[j] += gr[j] * hr[j];
        if (gb) (*gb)[j] += gr[j];
        dh[j] = gr[j] * gamma.value()[j];
        sum_dh += dh[j];
        sum_dh_h += dh[j] * hr[j];
      }
      if (gx) {
        const T k = (*inv_std)[r] / T(c);
        for (std::int64_t j = 0; j < c; ++j) (*gx)[r * c + j] += k * (T(c) * dh[j] - sum_dh - hr[j] * sum_dh_h);
      }
    }
  });
}

// out[i] = x[index[i]]; index -1 yields zero. Gradient scatters back.
template <typename T>
Var<T> gather(const Var<T>& x, IndexList index, Shape out_shape) {
  if (shape_numel(out_shape) != static_cast<std::int64_t>(index->size()))
    throw DimensionError("gather: index count does not match output shape " + shape_str(out_shape));
  Tensor<T> out(std::move(out_shape));
  const auto& idx = *index;
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<std::int64_t>(i)] = idx[i] < 0 ? T(0) : x.value()[idx[i]];
  return make_result<T>(std::move(out), {x}, [x, index](const Tensor<T>& g) {
    auto& gx = x.node().grad_ref();
    const auto& idx = *index;
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (idx[i] >= 0) gx[idx[i]] += g[static_cast<std::int64_t>(i)];
  });
}

// Row gather on x viewed as [rows, width] where width = x.dim(-1).
template <typename T>
Var<T> gather_rows(const Var<T>& x, IndexList rows, Shape out_shape) {
  const auto w = x.dim(-1);
  if (shape_numel(out_shape) != static_cast<std::int64_t>(rows->size()) * w)
    throw DimensionError("gather_rows: row count does not match output shape " + shape_str(out_shape));
  Tensor<T> out(std::move(out_shape));
  const auto& r = *rows;
  for (std::size_t i = 0; i < r.size(); ++i)
    std::copy_n(x.value().data() + r[i] * w, w, out.data() + static_cast<std::int64_t>(i) * w);
  return make_result<T>(std::move(out), {x}, [x, rows, w](const Tensor<T>& g) {
    auto& gx = x.node().grad_ref();
    const auto& r = *rows;
    for (std::size_t i = 0; i < r.size(); ++i) {
      T* dst = gx.data() + r[i] * w;
      const T* src = g.data() + static_cast<std::int64_t>(i) * w;
      for (std::int64_t j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
}

// Axis permutation, e.g. perm {0,2,3,1} maps NCHW to NHWC.
inline IndexList permute_index(const Shape& in, const std::vector<int>& perm, Shape* out_shape) {
  const int r = static_cast<int>(in.size());
  Shape os(in.size());
  for (int i = 0; i < r; ++i) os[i] = in[perm[i]];
  std::vector<std::int64_t> in_stride(in.size(), 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in[i + 1];
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(shape_numel(os)));
  std::vector<std::int64_t> coord(in.size(), 0);
  for (std::size_t lin = 0; lin < idx->size(); ++lin) {
    std::int64_t src = 0;
    for (int i = 0; i < r; ++i) src += coord[i] * in_stride[perm[i]];
    (*idx)[lin] = src;
    for (int i = r - 1; i >= 0; --i) {
      if (++coord[i] < os[i]) break;
      coord[i] = 0;
    }
  }
  *out_shape = os;
  return idx;
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<int>& perm) {
  Shape os;
  auto idx = permute_index(x.shape(), perm, &os);
  return gather(x, std::move(idx), std::move(os));
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw ArgumentError("concat: no inputs");
  const int r = static_cast<int>(xs[0].shape().size());
  const int a = axis < 0 ? axis + r : axis;
  Shape os = xs[0].shape();
  os[a] = 0;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= os[i];
  for (int i = a + 1; i < r; ++i) inner *= os[i];
  std::vector<std::int64_t> widths;
  for (const auto& v : xs) {
    for (int i = 0; i < r; ++i)
      if (i != a && v.shape()[i] != xs[0].shape()[i])
        throw DimensionError("concat: shapes " + shape_str(v.shape()) + " and " + shape_str(xs[0].shape()) +
                             " differ off the concat axis");
    widths.push_back(v.shape()[a] * inner);
    os[a] += v.shape()[a];
  }
  const std::int64_t total = os[a] * inner;
  Tensor<T> out(os);
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(xs[k].value().data() + o * widths[k], widths[k], out.data() + o * total + offset);
    offset += widths[k];
  }
  return make_result<T>(std::move(out), xs, [xs, widths, outer, total](const Tensor<T>& g) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (auto* gx = grad_of(xs[k]))
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t j = 0; j < widths[k]; ++j) (*gx)[o * widths[k] + j] += g[o * total + off + j];
      off += widths[k];
    }
  });
}

// Slice [begin, begin+count) along axis 0.
template <typename T>
Var<T> narrow(const Var<T>& x, std::int64_t begin, std::int64_t count) {
  const auto n0 = x.dim(0);
  if (begin < 0 || count < 0 || begin + count > n0) throw DimensionError("narrow: range outside axis 0");
  const auto inner = n0 ? x.numel() / n0 : 0;
  Shape os = x.shape();
  os[0] = count;
  Tensor<T> out(os);
  std::copy_n(x.value().data() + begin * inner, count * inner, out.data());
  return make_result<T>(std::move(out), {x}, [x, begin, inner](const Tensor<T>& g) {
    auto& gx = x.node().grad_ref();
    for (std::int64_t i = 0; i < g.numel(); ++i) gx[begin * inner + i] += g[i];
  });
}

}  // namespace s4cv
