#pragma once

// Convolutional U-shaped encoder-decoder.
//
// Parameter names: enc.<i>.{conv1,conv2}.{weight,bias}, enc.<i>.{bn1,bn2}.{weight,bias}
// with buffers enc.<i>.{bn1,bn2}.{running_mean,running_var}; dec.<j>.reduce.{weight,bias}
// (1x1 channel reduction before upsampling), dec.<j>.* block as in the encoder;
// out.{weight,bias} (1x1 class head).

#include <string>
#include <vector>

#include "s4cv/backbones/network.hpp"
#include "s4cv/core/conv.hpp"

namespace s4cv {

struct CnnConfig {
  // Channel width per resolution level; the last entry is the bottleneck.
  std::vector<int> widths{64, 128, 256, 512, 1024};
  float leaky_slope = 0.01f;

  int levels() const { return static_cast<int>(widths.size()); }

  void validate() const {
    if (widths.size() < 2) throw ConfigError("cnn config: at least two levels required");
    for (int w : widths)
      if (w <= 0) throw ConfigError("cnn config: widths must be positive");
  }
};

template <typename T>
struct ConvBlockParams {
  Var<T> conv1_w, conv1_b, bn1_w, bn1_b, conv2_w, conv2_b, bn2_w, bn2_b;
  BatchNormState<T>* bn1 = nullptr;
  BatchNormState<T>* bn2 = nullptr;
};

// conv3x3 -> BN -> LeakyReLU -> conv3x3 -> BN -> LeakyReLU.
template <typename T>
Var<T> conv_block(const Var<T>& x, const ConvBlockParams<T>& p, Mode mode, T slope) {
  const bool train = mode == Mode::Train;
  auto y = conv2d(x, p.conv1_w, &p.conv1_b, 1, 1);
  y = leaky_relu(batch_norm2d(y, p.bn1_w, p.bn1_b, *p.bn1, train), slope);
  y = conv2d(y, p.conv2_w, &p.conv2_b, 1, 1);
  return leaky_relu(batch_norm2d(y, p.bn2_w, p.bn2_b, *p.bn2, train), slope);
}

template <typename T>
class UNet final : public SegNetwork<T> {
 public:
  UNet(CnnConfig cfg, int num_classes, Rng& rng) : cfg_(std::move(cfg)), classes_(num_classes) {
    cfg_.validate();
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    const int L = cfg_.levels();
    // Batch-norm states are referenced by pointer; reserve so they never move.
    bn_.reserve(static_cast<std::size_t>(4 * L));
    int in = 1;
    for (int i = 0; i < L; ++i) {
      encoder_.push_back(make_block("enc." + std::to_string(i), in, cfg_.widths[i], rng));
      in = cfg_.widths[i];
    }
    for (int j = 0; j + 1 < L; ++j) {
      const int level = L - 2 - j;
      const std::int64_t deep = j == 0 ? cfg_.widths[L - 1] : cfg_.widths[level + 1];
      const std::int64_t w = cfg_.widths[level];
      const auto pre = "dec." + std::to_string(j);
      reduce_w_.push_back(this->params_.add(pre + ".reduce.weight", init::fan_in_normal<T>({w, deep, 1, 1}, deep, rng)));
      reduce_b_.push_back(this->params_.add(pre + ".reduce.bias", init::constant<T>({w}, 0)));
      decoder_.push_back(make_block(pre, static_cast<int>(2 * w), static_cast<int>(w), rng));
    }
    const std::int64_t w0 = cfg_.widths[0];
    out_w_ = this->params_.add("out.weight", init::fan_in_normal<T>({num_classes, w0, 1, 1}, w0, rng));
    out_b_ = this->params_.add("out.bias", init::constant<T>({num_classes}, 0));
  }

  Arch arch() const override { return Arch::CNN; }
  int num_classes() const override { return classes_; }
  const CnnConfig& config() const { return cfg_; }

  void check_input(std::int64_t height, std::int64_t width) const override {
    const std::int64_t factor = std::int64_t{1} << (cfg_.levels() - 1);
    if (height % factor || width % factor || height <= 0 || width <= 0)
      throw DimensionError("CNN input " + std::to_string(height) + "x" + std::to_string(width) +
                           " incompatible: sides must be divisible by 2^(levels-1) = " + std::to_string(factor));
  }

  using SegNetwork<T>::forward;
  Var<T> forward(const Var<T>& images, Mode mode) override {
    if (images.dim(1) != 1) throw DimensionError("CNN expects single-channel input");
    check_input(images.dim(2), images.dim(3));
    const int L = cfg_.levels();
    const T slope = static_cast<T>(cfg_.leaky_slope);
    std::vector<Var<T>> feats;
    auto x = conv_block(images, encoder_[0], mode, slope);
    this->trace("encoder0", x.dim(2), x.dim(3), x.dim(1));
    feats.push_back(x);
    for (int i = 1; i < L; ++i) {
      x = conv_block(max_pool2x2(x), encoder_[i], mode, slope);
      this->trace(i + 1 < L ? "encoder" + std::to_string(i) : std::string("bottleneck"), x.dim(2), x.dim(3), x.dim(1));
      feats.push_back(x);
    }
    for (int j = 0; j + 1 < L; ++j) {
      const int level = L - 2 - j;
      x = upsample_bilinear2x(conv2d(x, reduce_w_[j], &reduce_b_[j], 1, 0));
      x = conv_block(concat<T>({feats[level], x}, 1), decoder_[j], mode, slope);
      this->trace("decoder" + std::to_string(j), x.dim(2), x.dim(3), x.dim(1));
    }
    auto logits = conv2d(x, out_w_, &out_b_, 1, 0);
    this->trace("logits", logits.dim(2), logits.dim(3), logits.dim(1));
    return logits;
  }

  const ConvBlockParams<T>& encoder_block(int i) const { return encoder_[i]; }

 private:
  ConvBlockParams<T> make_block(const std::string& pre, int in, int out, Rng& rng) {
    auto& st = this->params_;
    const std::int64_t I = in, O = out;
    ConvBlockParams<T> p;
    p.conv1_w = st.add(pre + ".conv1.weight", init::fan_in_normal<T>({O, I, 3, 3}, I * 9, rng));
    p.conv1_b = st.add(pre + ".conv1.bias", init::constant<T>({O}, 0));
    p.bn1_w = st.add(pre + ".bn1.weight", init::constant<T>({O}, 1));
    p.bn1_b = st.add(pre + ".bn1.bias", init::constant<T>({O}, 0));
    p.conv2_w = st.add(pre + ".conv2.weight", init::fan_in_normal<T>({O, O, 3, 3}, O * 9, rng));
    p.conv2_b = st.add(pre + ".conv2.bias", init::constant<T>({O}, 0));
    p.bn2_w = st.add(pre + ".bn2.weight", init::constant<T>({O}, 1));
    p.bn2_b = st.add(pre + ".bn2.bias", init::constant<T>({O}, 0));
    p.bn1 = &make_bn(pre + ".bn1", O);
    p.bn2 = &make_bn(pre + ".bn2", O);
    return p;
  }

  BatchNormState<T>& make_bn(const std::string& pre, std::int64_t c) {
    BatchNormState<T> s;
    s.running_mean = &this->params_.add_buffer(pre + ".running_mean", init::constant<T>({c}, 0));
    s.running_var = &this->params_.add_buffer(pre + ".running_var", init::constant<T>({c}, 1));
    bn_.push_back(s);
    return bn_.back();
  }

  CnnConfig cfg_;
  int classes_;
  std::vector<ConvBlockParams<T>> encoder_, decoder_;
  std::vector<Var<T>> reduce_w_, reduce_b_;
  Var<T> out_w_, out_b_;
  std::vector<BatchNormState<T>> bn_;
};

}  // namespace s4cv
