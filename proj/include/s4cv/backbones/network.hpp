#pragma once

#include <string>
#include <vector>

#include "s4cv/core/autograd.hpp"
#include "s4cv/nn/params.hpp"

namespace s4cv {

enum class Arch { CNN, ViT };
enum class Mode { Train, Eval };

inline std::string to_string(Arch a) { return a == Arch::CNN ? "CNN" : "ViT"; }

inline Arch parse_arch(const std::string& s) {
  if (s == "CNN" || s == "cnn") return Arch::CNN;
  if (s == "ViT" || s == "vit" || s == "VIT") return Arch::ViT;
  throw ArgumentError("unknown architecture '" + s + "' (expected CNN or ViT)");
}

// Spatial sizes visited by a forward pass, for shape assertions.
struct ShapeTrace {
  struct Step {
    std::string stage;
    std::int64_t height, width, channels;
  };
  std::vector<Step> steps;

  void record(std::string stage, std::int64_t h, std::int64_t w, std::int64_t c) {
    steps.push_back({std::move(stage), h, w, c});
  }
  std::vector<std::int64_t> sides() const {
    std::vector<std::int64_t> out;
    for (const auto& s : steps) out.push_back(s.height);
    return out;
  }
};

// A segmentation network mapping [B,1,H,W] images to [B,K,H,W] logits.
template <typename T>
class SegNetwork {
 public:
  virtual ~SegNetwork() = default;

  virtual Arch arch() const = 0;
  virtual int num_classes() const = 0;
  // Throws DimensionError naming the required divisibility.
  virtual void check_input(std::int64_t height, std::int64_t width) const = 0;
  virtual Var<T> forward(const Var<T>& images, Mode mode) = 0;

  Var<T> forward(const Tensor<T>& images, Mode mode) { return forward(Var<T>::constant(images), mode); }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  void set_trace(ShapeTrace* t) { trace_ = t; }

 protected:
  void trace(std::string stage, std::int64_t h, std::int64_t w, std::int64_t c) {
    if (trace_) trace_->record(std::move(stage), h, w, c);
  }

  ParamStore<T> params_;
  ShapeTrace* trace_ = nullptr;
};

}  // namespace s4cv
