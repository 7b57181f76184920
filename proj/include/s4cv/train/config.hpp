#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "s4cv/backbones/factory.hpp"
#include "s4cv/core/keyvalue.hpp"
#include "s4cv/semi/supervision.hpp"

namespace s4cv {

enum class LrSchedule { Poly, Constant };

inline std::string to_string(LrSchedule s) { return s == LrSchedule::Poly ? "poly" : "constant"; }

inline LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "poly") return LrSchedule::Poly;
  if (s == "constant") return LrSchedule::Constant;
  throw ArgumentError("unknown lr_schedule '" + s + "' (expected poly or constant)");
}

struct TrainConfig {
  long max_iterations = 30000;
  int batch_size = 24;
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  long eval_every = 200;
  std::uint64_t seed = 0;
  LrSchedule lr_schedule = LrSchedule::Poly;
  long ramp_update_every = 150;
  double ema_cap = 0.99;
  PerturbConfig perturb;
  bool augment = true;
  int eval_batch = 16;
  bool keep_all_checkpoints = false;
  std::vector<std::string> frozen;  // learner ids excluded from updates

  void validate() const {
    if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (eval_every <= 0) throw ConfigError("eval_every must be positive");
    if (ramp_update_every <= 0) throw ConfigError("ramp_update_every must be positive");
    if (ema_cap < 0 || ema_cap >= 1) throw ConfigError("ema_cap must be in [0, 1)");
    if (eval_batch <= 0) throw ConfigError("eval_batch must be positive");
  }
};

namespace config_detail {

template <typename V>
std::string str(V v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename V>
void get(const KeyValues& kv, const std::string& key, V& out) {
  auto it = kv.find(key);
  if (it == kv.end()) return;
  std::istringstream is(it->second);
  V v{};
  if (!(is >> v) || !(is >> std::ws).eof()) throw ConfigError("bad value for " + key + ": '" + it->second + "'");
  out = v;
}

inline void get_bool(const KeyValues& kv, const std::string& key, bool& out) {
  auto it = kv.find(key);
  if (it == kv.end()) return;
  if (it->second == "true" || it->second == "1") out = true;
  else if (it->second == "false" || it->second == "0") out = false;
  else throw ConfigError("bad value for " + key + ": '" + it->second + "'");
}

}  // namespace config_detail

using KeyValueList = std::vector<std::pair<std::string, std::string>>;

inline KeyValueList to_key_values(const TrainConfig& c) {
  using config_detail::str;
  return {{"max_iterations", str(c.max_iterations)},
          {"batch_size", str(c.batch_size)},
          {"lr0", str(c.lr0)},
          {"momentum", str(c.momentum)},
          {"weight_decay", str(c.weight_decay)},
          {"eval_every", str(c.eval_every)},
          {"seed", str(c.seed)},
          {"lr_schedule", to_string(c.lr_schedule)},
          {"ramp_update_every", str(c.ramp_update_every)},
          {"ema_cap", str(c.ema_cap)},
          {"perturb_strength", str(c.perturb.strength)},
          {"perturb_clip", str(c.perturb.clip)},
          {"augment", c.augment ? "true" : "false"},
          {"eval_batch", str(c.eval_batch)},
          {"keep_all_checkpoints", c.keep_all_checkpoints ? "true" : "false"},
          {"frozen", join(c.frozen)}};
}

inline void apply_keys(const KeyValues& kv, TrainConfig& c) {
  using namespace config_detail;
  get(kv, "max_iterations", c.max_iterations);
  get(kv, "batch_size", c.batch_size);
  get(kv, "lr0", c.lr0);
  get(kv, "momentum", c.momentum);
  get(kv, "weight_decay", c.weight_decay);
  get(kv, "eval_every", c.eval_every);
  get(kv, "seed", c.seed);
  if (auto it = kv.find("lr_schedule"); it != kv.end()) c.lr_schedule = parse_lr_schedule(it->second);
  get(kv, "ramp_update_every", c.ramp_update_every);
  get(kv, "ema_cap", c.ema_cap);
  get(kv, "perturb_strength", c.perturb.strength);
  get(kv, "perturb_clip", c.perturb.clip);
  get_bool(kv, "augment", c.augment);
  get(kv, "eval_batch", c.eval_batch);
  get_bool(kv, "keep_all_checkpoints", c.keep_all_checkpoints);
  if (auto it = kv.find("frozen"); it != kv.end()) c.frozen = split_list(it->second);
}

inline KeyValueList to_key_values(const BackboneConfig& b) {
  using config_detail::str;
  return {{"num_classes", str(b.num_classes)},
          {"vit.patch_size", str(b.vit.patch_size)},
          {"vit.embed_dim", str(b.vit.embed_dim)},
          {"vit.num_heads", join(b.vit.num_heads)},
          {"vit.window_size", str(b.vit.window_size)},
          {"vit.depth", str(b.vit.depth)},
          {"vit.mlp_ratio", str(b.vit.mlp_ratio)},
          {"vit.relative_position_bias", b.vit.relative_position_bias ? "true" : "false"},
          {"cnn.widths", join(b.cnn.widths)},
          {"cnn.leaky_slope", str(b.cnn.leaky_slope)}};
}

inline void apply_keys(const KeyValues& kv, BackboneConfig& b) {
  using namespace config_detail;
  get(kv, "num_classes", b.num_classes);
  get(kv, "vit.patch_size", b.vit.patch_size);
  get(kv, "vit.embed_dim", b.vit.embed_dim);
  if (auto it = kv.find("vit.num_heads"); it != kv.end()) b.vit.num_heads = parse_int_list(it->second);
  get(kv, "vit.window_size", b.vit.window_size);
  get(kv, "vit.depth", b.vit.depth);
  get(kv, "vit.mlp_ratio", b.vit.mlp_ratio);
  get_bool(kv, "vit.relative_position_bias", b.vit.relative_position_bias);
  if (auto it = kv.find("cnn.widths"); it != kv.end()) b.cnn.widths = parse_int_list(it->second);
  get(kv, "cnn.leaky_slope", b.cnn.leaky_slope);
}

// Small networks for 64x64 desk-scale experiments.
inline BackboneConfig desk_backbones(int num_classes = 4) {
  BackboneConfig b;
  b.num_classes = num_classes;
  b.vit.patch_size = 4;
  b.vit.embed_dim = 24;
  b.vit.num_heads = {1, 2, 4, 8};
  b.vit.window_size = 4;
  b.vit.mlp_ratio = 2;
  b.cnn.widths = {8, 16, 32, 64, 128};
  return b;
}

}  // namespace s4cv
