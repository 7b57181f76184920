#pragma once

#include <memory>

#include "s4cv/backbones/swin.hpp"
#include "s4cv/backbones/unet.hpp"

namespace s4cv {

struct BackboneConfig {
  AttentionConfig vit;
  CnnConfig cnn;
  int num_classes = 4;
};

template <typename T>
std::shared_ptr<SegNetwork<T>> make_network(Arch arch, const BackboneConfig& cfg, Rng& rng) {
  if (arch == Arch::CNN) return std::make_shared<UNet<T>>(cfg.cnn, cfg.num_classes, rng);
  return std::make_shared<SwinUNet<T>>(cfg.vit, cfg.num_classes, rng);
}

}  // namespace s4cv
