#pragma once

#include <string>

#include "s4cv/core/autograd.hpp"
#include "s4cv/data/batch.hpp"

namespace s4cv {

// Logits [B, K, H, W] from one network.
template <typename T>
struct Prediction {
  Var<T> logits;
  std::string source;  // handle id
  bool tracks_grad = true;

  int num_classes() const { return static_cast<int>(logits.dim(1)); }
};

// Per-pixel argmax over classes (lowest index wins ties).
template <typename T>
LabelMap make_pseudo_label(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw DimensionError("pseudo label: logits must be [B,K,H,W], got " + shape_str(logits.shape()));
  const auto B = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  LabelMap out(Shape{B, logits.dim(2), logits.dim(3)});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < HW; ++i) {
      const T* px = logits.data() + b * K * HW + i;
      std::int32_t best = 0;
      for (std::int64_t k = 1; k < K; ++k)
        if (px[k * HW] > px[best * HW]) best = static_cast<std::int32_t>(k);
      out[b * HW + i] = best;
    }
  return out;
}

template <typename T>
LabelMap make_pseudo_label(const Prediction<T>& p) {
  return make_pseudo_label(p.logits.value());
}

}  // namespace s4cv
