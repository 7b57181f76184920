#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "s4cv/core/autograd.hpp"
#include "s4cv/core/random.hpp"

namespace s4cv {

// Named parameters (trainable leaves) and buffers (non-trainable state such
// as batch-norm running statistics) of one network. Names are the stable
// checkpoint keys.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    if (params_.count(name) || buffers_.count(name)) throw ConfigError("duplicate parameter name " + name);
    auto v = Var<T>::leaf(std::move(init), trainable_);
    params_.emplace(name, v);
    param_order_.push_back(name);
    return v;
  }

  Tensor<T>& add_buffer(const std::string& name, Tensor<T> init) {
    if (params_.count(name) || buffers_.count(name)) throw ConfigError("duplicate buffer name " + name);
    buffer_order_.push_back(name);
    return buffers_.emplace(name, std::move(init)).first->second;
  }

  const std::vector<std::string>& param_names() const { return param_order_; }
  const std::vector<std::string>& buffer_names() const { return buffer_order_; }

  Var<T>& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw StructuralError("unknown parameter " + name);
    return it->second;
  }
  const Var<T>& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw StructuralError("unknown parameter " + name);
    return it->second;
  }
  Tensor<T>& buffer(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw StructuralError("unknown buffer " + name);
    return it->second;
  }
  const Tensor<T>& buffer(const std::string& name) const {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw StructuralError("unknown buffer " + name);
    return it->second;
  }
  bool has_buffer(const std::string& name) const { return buffers_.count(name) > 0; }

  // Teachers are frozen: their leaves never record gradients.
  void set_trainable(bool on) {
    trainable_ = on;
    for (auto& [_, v] : params_) v.set_requires_grad(on);
  }
  bool trainable() const { return trainable_; }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& [_, v] : params_) n += v.numel();
    return n;
  }

 private:
  bool trainable_ = true;
  std::map<std::string, Var<T>> params_;
  std::map<std::string, Tensor<T>> buffers_;
  std::vector<std::string> param_order_;
  std::vector<std::string> buffer_order_;
};

// Flat copy of every parameter and buffer value, keyed by name.
template <typename T>
struct ParamSnapshot {
  std::map<std::string, Tensor<T>> params;
  std::map<std::string, Tensor<T>> buffers;
};

template <typename T>
ParamSnapshot<T> snapshot(const ParamStore<T>& store) {
  ParamSnapshot<T> s;
  for (const auto& n : store.param_names()) s.params.emplace(n, store.param(n).value());
  for (const auto& n : store.buffer_names()) s.buffers.emplace(n, store.buffer(n));
  return s;
}

template <typename T>
void restore(ParamStore<T>& store, const ParamSnapshot<T>& s) {
  for (const auto& n : store.param_names()) {
    auto it = s.params.find(n);
    if (it == s.params.end()) throw StructuralError("snapshot lacks parameter " + n);
    if (it->second.shape() != store.param(n).shape())
      throw StructuralError("parameter " + n + " has shape " + shape_str(it->second.shape()) + ", expected " +
                            shape_str(store.param(n).shape()));
    store.param(n).mutable_value() = it->second;
  }
  for (const auto& n : store.buffer_names()) {
    auto it = s.buffers.find(n);
    if (it == s.buffers.end()) throw StructuralError("snapshot lacks buffer " + n);
    if (it->second.shape() != store.buffer(n).shape()) throw StructuralError("buffer " + n + " has wrong shape");
    store.buffer(n) = it->second;
  }
}

namespace init {

template <typename T>
Tensor<T> truncated_normal(Shape s, double std, Rng& rng) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(std * rng.truncated_normal());
  return t;
}

// He-style normal scaled by fan-in.
template <typename T>
Tensor<T> fan_in_normal(Shape s, std::int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(s));
  const double std = std::sqrt(2.0 / double(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(std * rng.normal());
  return t;
}

template <typename T>
Tensor<T> constant(Shape s, T v) {
  return Tensor<T>(std::move(s), v);
}

}  // namespace init

}  // namespace s4cv
