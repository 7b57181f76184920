#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "s4cv/backbones/network.hpp"
#include "s4cv/core/random.hpp"
#include "s4cv/semi/prediction.hpp"

namespace s4cv {

enum class Role { Learner, Teacher };

inline std::string to_string(Role r) { return r == Role::Learner ? "learner" : "teacher"; }

// One network of a framework. Teachers hold an EMA of `ema_source`.
template <typename T>
struct NetworkHandle {
  std::string id;
  Arch arch = Arch::CNN;
  Role role = Role::Learner;
  std::shared_ptr<SegNetwork<T>> net;
  std::optional<std::string> ema_source;

  bool is_teacher() const { return role == Role::Teacher; }
};

struct EmaState {
  long step = 0;
  double alpha_cap = 0.99;

  double alpha() const { return std::min(1.0 - 1.0 / double(step + 1), alpha_cap); }
};

// teacher <- alpha * teacher + (1 - alpha) * student for every parameter and
// buffer, then advances the step.
template <typename T>
void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, EmaState& state) {
  if (teacher.param_names() != student.param_names() || teacher.buffer_names() != student.buffer_names())
    throw StructuralError("ema_update: teacher and student parameter sets differ");
  const T a = static_cast<T>(state.alpha()), b = static_cast<T>(1.0 - state.alpha());
  auto blend = [&](Tensor<T>& dst, const Tensor<T>& src, const std::string& name) {
    if (dst.shape() != src.shape())
      throw StructuralError("ema_update: parameter " + name + " has shape " + shape_str(dst.shape()) +
                            " in the teacher but " + shape_str(src.shape()) + " in the student");
    for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] = a * dst[i] + b * src[i];
  };
  for (const auto& n : teacher.param_names()) blend(teacher.param(n).mutable_value(), student.param(n).value(), n);
  for (const auto& n : teacher.buffer_names()) blend(teacher.buffer(n), student.buffer(n), n);
  ++state.step;
}

template <typename T>
void ema_update(NetworkHandle<T>& teacher, const NetworkHandle<T>& student, EmaState& state) {
  if (!teacher.is_teacher()) throw ConfigError("ema_update: '" + teacher.id + "' is not a teacher");
  if (teacher.arch != student.arch)
    throw StructuralError("ema_update: teacher '" + teacher.id + "' is " + to_string(teacher.arch) + " but source '" +
                          student.id + "' is " + to_string(student.arch));
  ema_update(teacher.net->params(), student.net->params(), state);
}

struct RampSchedule {
  long max_iteration = 30000;
  long update_every = 150;
};

// exp(-5 (1 - t_s / t_max)^2) with t_s = t rounded down to the update grid;
// the final iteration always evaluates to exactly 1.
inline double ramp_weight(long t, const RampSchedule& s) {
  if (t < 0 || t > s.max_iteration)
    throw ArgumentError("ramp_weight: t=" + std::to_string(t) + " outside [0, " + std::to_string(s.max_iteration) +
                        "]");
  if (s.update_every <= 0) throw ArgumentError("ramp_weight: update_every must be positive");
  if (t == s.max_iteration) return 1.0;
  const long ts = t / s.update_every * s.update_every;
  const double u = 1.0 - double(ts) / double(s.max_iteration);
  return std::exp(-5.0 * u * u);
}

struct PerturbConfig {
  double strength = 0.1;  // noise standard deviation
  double clip = 0.2;
};

// Adds clipped zero-mean uniform noise of the configured standard deviation
// to items [first, B) of `images`; earlier items are returned untouched.
template <typename T>
Tensor<T> perturb(const Tensor<T>& images, int first, const PerturbConfig& cfg, std::uint64_t seed) {
  Tensor<T> out = images;
  if (cfg.strength <= 0) return out;
  const auto per_item = images.numel() / std::max<std::int64_t>(images.dim(0), 1);
  const double half_width = std::sqrt(3.0) * cfg.strength;
  Rng rng(seed);
  for (std::int64_t i = std::int64_t{first} * per_item; i < out.numel(); ++i) {
    const double n = std::clamp(rng.uniform(-half_width, half_width), -cfg.clip, cfg.clip);
    out[i] = static_cast<T>(double(out[i]) + n);
  }
  return out;
}

template <typename T>
SegBatch<T> perturb(const SegBatch<T>& batch, const PerturbConfig& cfg, std::uint64_t seed) {
  SegBatch<T> out = batch;
  out.images = perturb(batch.images, batch.labeled_count, cfg, seed);
  return out;
}

// Runs every handle on the batch. Learners that feed a teacher see the
// perturbed batch; teachers run in inference mode without recording.
template <typename T>
std::vector<Prediction<T>> forward_all(const SegBatch<T>& batch, const std::vector<NetworkHandle<T>>& handles,
                                       const PerturbConfig& noise, std::uint64_t seed) {
  std::vector<Prediction<T>> out;
  std::optional<Tensor<T>> noisy;
  for (const auto& h : handles) {
    if (h.is_teacher()) {
      NoGradGuard ng;
      out.push_back({h.net->forward(batch.images, Mode::Eval), h.id, false});
      continue;
    }
    const bool feeds_teacher = std::any_of(handles.begin(), handles.end(), [&](const NetworkHandle<T>& o) {
      return o.is_teacher() && o.ema_source == h.id;
    });
    const Tensor<T>* input = &batch.images;
    if (feeds_teacher && noise.strength > 0 && batch.unlabeled_count() > 0) {
      if (!noisy) noisy = perturb(batch.images, batch.labeled_count, noise, seed);
      input = &*noisy;
    }
    out.push_back({h.net->forward(*input, Mode::Train), h.id, grad_enabled()});
  }
  return out;
}

}  // namespace s4cv
