#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s4cv/core/tensor.hpp"

namespace s4cv {

using LabelMap = Tensor<std::int32_t>;  // [B, H, W] class ids

// Mixed mini-batch: labeled items occupy [0, labeled_count) and carry masks.
template <typename T>
struct SegBatch {
  Tensor<T> images;  // [B, 1, H, W]
  LabelMap masks;    // [labeled_count, H, W]
  int labeled_count = 0;
  std::vector<std::string> ids;

  int size() const { return static_cast<int>(images.dim(0)); }
  int unlabeled_count() const { return size() - labeled_count; }
};

}  // namespace s4cv
