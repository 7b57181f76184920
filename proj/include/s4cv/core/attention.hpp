#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "s4cv/core/ops.hpp"

namespace s4cv {

// Additive terms applied to attention scores before the softmax.
template <typename T>
struct AttentionBias {
  // Learned relative-position table [(2M-1)^2, heads] and the per-pair
  // lookup index [N*N]; table undefined when the bias is disabled.
  Var<T> table;
  IndexList relative_index;
  // Constant mask [num_windows, N, N] (0 or a large negative); window w of
  // batch item b sits at row b*num_windows + w. Null when unshifted.
  std::shared_ptr<const Tensor<T>> mask;
};

// Scaled dot-product attention inside each window, all heads at once.
// qkv [Bw, N, 3C] laid out (q|k|v, head, head_dim); returns [Bw, N, C].
// If `probe` is given it receives the attention probabilities [Bw, H, N, N].
template <typename T>
Var<T> window_attention(const Var<T>& qkv, int heads, T scale, const AttentionBias<T>& bias,
                        Tensor<T>* probe = nullptr) {
  if (qkv.shape().size() != 3) throw DimensionError("window_attention: qkv must be [Bw, N, 3C]");
  const auto Bw = qkv.dim(0), N = qkv.dim(1), C3 = qkv.dim(2);
  if (C3 % 3) throw ConfigError("window_attention: last dim " + std::to_string(C3) + " not divisible by 3");
  const auto C = C3 / 3;
  if (heads <= 0 || C % heads)
    throw ConfigError("window_attention: dim " + std::to_string(C) + " not divisible by " + std::to_string(heads) +
                      " heads");
  const auto d = C / heads;
  const bool use_table = bias.table.defined();
  if (use_table) {
    if (bias.table.dim(1) != heads) throw ConfigError("window_attention: bias table head count mismatch");
    if (!bias.relative_index || static_cast<std::int64_t>(bias.relative_index->size()) != N * N)
      throw DimensionError("window_attention: relative index does not cover N*N pairs");
  }
  std::int64_t nW = 0;
  if (bias.mask) {
    nW = bias.mask->dim(0);
    if (bias.mask->dim(1) != N || bias.mask->dim(2) != N || Bw % nW)
      throw DimensionError("window_attention: mask shape " + shape_str(bias.mask->shape()) + " incompatible");
  }

  using Stride = Eigen::OuterStride<>;
  using ConstStrided = Eigen::Map<const RowMat<T>, 0, Stride>;
  using Strided = Eigen::Map<RowMat<T>, 0, Stride>;

  auto probs = std::make_shared<Tensor<T>>(Shape{Bw, heads, N, N});
  Tensor<T> out(Shape{Bw, N, C});
  const T* base = qkv.value().data();
  for (std::int64_t b = 0; b < Bw; ++b)
    for (int h = 0; h < heads; ++h) {
      const T* blk = base + b * N * C3;
      ConstStrided Q(blk + h * d, N, d, Stride(C3));
      ConstStrided K(blk + C + h * d, N, d, Stride(C3));
      ConstStrided V(blk + 2 * C + h * d, N, d, Stride(C3));
      MatMap<T> P(probs->data() + (b * heads + h) * N * N, N, N);
      P.noalias() = scale * (Q * K.transpose());
      if (use_table) {
        const auto& ri = *bias.relative_index;
        for (std::int64_t k = 0; k < N * N; ++k) P.data()[k] += bias.table.value()[ri[k] * heads + h];
      }
      if (nW) {
        const T* msk = bias.mask->data() + (b % nW) * N * N;
        for (std::int64_t k = 0; k < N * N; ++k) P.data()[k] += msk[k];
      }
      for (std::int64_t i = 0; i < N; ++i) {
        auto row = P.row(i);
        const T mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      Strided O(out.data() + b * N * C + h * d, N, d, Stride(C));
      O.noalias() = P * V;
    }
  if (probe) *probe = *probs;

  std::vector<Var<T>> inputs{qkv};
  if (use_table) inputs.push_back(bias.table);
  return make_result<T>(std::move(out), inputs, [qkv, heads, scale, bias, probs, Bw, N, C, d](const Tensor<T>& g) {
    const auto C3 = 3 * C;
    auto* gqkv = grad_of(qkv);
    auto* gtab = bias.table.defined() ? grad_of(bias.table) : nullptr;
    const T* base = qkv.value().data();
    RowMat<T> dP(N, N), dS(N, N);
    for (std::int64_t b = 0; b < Bw; ++b)
      for (int h = 0; h < heads; ++h) {
        const T* blk = base + b * N * C3;
        ConstStrided Q(blk + h * d, N, d, Stride(C3));
        ConstStrided K(blk + C + h * d, N, d, Stride(C3));
        ConstStrided V(blk + 2 * C + h * d, N, d, Stride(C3));
        ConstMatMap<T> P(probs->data() + (b * heads + h) * N * N, N, N);
        ConstStrided G(g.data() + b * N * C + h * d, N, d, Stride(C));
        dP.noalias() = G * V.transpose();
        for (std::int64_t i = 0; i < N; ++i) {
          const T dot = P.row(i).dot(dP.row(i));
          dS.row(i) = P.row(i).array() * (dP.row(i).array() - dot);
        }
        if (gtab) {
          const auto& ri = *bias.relative_index;
          for (std::int64_t k = 0; k < N * N; ++k) (*gtab)[ri[k] * heads + h] += dS.data()[k];
        }
        if (gqkv) {
          T* gblk = gqkv->data() + b * N * C3;
          Strided GQ(gblk + h * d, N, d, Stride(C3));
          Strided GK(gblk + C + h * d, N, d, Stride(C3));
          Strided GV(gblk + 2 * C + h * d, N, d, Stride(C3));
          GV.noalias() += P.transpose() * G;
          GQ.noalias() += scale * (dS * K);
          GK.noalias() += scale * (dS.transpose() * Q);
        }
      }
  });
}

}  // namespace s4cv
