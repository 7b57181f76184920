#pragma once

// Output directory written by train():
//   metrics.log          tab-separated, one row per iteration
//   ckpt_<iter>/         <node>.s4ca per network, framework.spec, manifest.txt
//   best.txt             name of the best checkpoint directory

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "s4cv/data/dataset.hpp"
#include "s4cv/metrics/metrics.hpp"
#include "s4cv/nn/archive.hpp"
#include "s4cv/topology/framework.hpp"
#include "s4cv/train/config.hpp"

namespace s4cv {

// Polynomial decay lr0 (1 - t/T)^0.9 over steps t = 0..T-1, or constant.
inline double learning_rate(const TrainConfig& c, long t) {
  if (c.lr_schedule == LrSchedule::Constant || c.max_iterations <= 0) return c.lr0;
  return c.lr0 * std::pow(1.0 - double(t) / double(c.max_iterations), 0.9);
}

template <typename T>
struct SgdState {
  std::map<std::string, Tensor<T>> velocity;
};

// Momentum SGD with L2 weight decay folded into the gradient:
//   v <- momentum v + (g + wd p),  p <- p - lr v.
// All gradients are checked before any parameter moves.
template <typename T>
void sgd_step(const std::vector<std::pair<std::string, Var<T>>>& params, SgdState<T>& state, double lr,
              double momentum, double weight_decay) {
  for (const auto& [name, v] : params)
    for (auto g : v.grad().values())
      if (!std::isfinite(double(g))) throw NumericalError("non-finite gradient in parameter " + name);
  const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), step = static_cast<T>(lr);
  for (const auto& [name, v] : params) {
    auto var = v;
    auto& p = var.mutable_value();
    const auto& g = v.grad();
    auto [it, fresh] = state.velocity.try_emplace(name, p.shape());
    auto& vel = it->second;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const T d = g[i] + wd * p[i];
      vel[i] = fresh ? d : mu * vel[i] + d;
      p[i] -= step * vel[i];
    }
  }
}

template <typename T>
struct CheckpointRecord {
  long iteration = 0;
  std::string dir;  // empty when nothing was written
  std::map<std::string, ParamSnapshot<T>> networks;
  MetricReport validation;
  bool best = false;
};

template <typename T>
struct TrainResult {
  CheckpointRecord<T> best;
  std::vector<std::pair<long, double>> val_miou;  // (iteration, mIOU of the test node)
  std::vector<LossBreakdown> losses;              // index i is iteration i + 1
  std::vector<double> lambdas;
  std::vector<double> learning_rates;
};

// Labels of the LossBreakdown entries in order: sup, learner semi, teacher semi.
template <typename T>
std::vector<std::string> term_labels(const Assembly<T>& a) {
  std::vector<std::string> out;
  const auto& hs = a.handles();
  for (auto group : {LambdaGroup::None, LambdaGroup::Learner, LambdaGroup::Teacher})
    for (const auto& t : a.terms()) {
      if (t.group != group) continue;
      if (t.kind == TermKind::Sup) out.push_back("sup_" + hs[t.target].id);
      else out.push_back("semi_" + hs[t.target].id + "_from_" + hs[t.source].id);
    }
  return out;
}

// Argmax predictions of one network in inference mode.
template <typename T>
std::vector<LabelMap> predict(SegNetwork<T>& net, const Dataset& ds, const std::vector<std::string>& ids,
                              int eval_batch = 16) {
  std::vector<LabelMap> out;
  NoGradGuard ng;
  for (std::size_t s = 0; s < ids.size(); s += static_cast<std::size_t>(eval_batch)) {
    const std::vector<std::string> chunk(ids.begin() + s, ids.begin() + std::min(ids.size(), s + eval_batch));
    const auto b = stack_cases<T>(ds, chunk);
    const auto labels = make_pseudo_label(net.forward(b.images, Mode::Eval).value());
    const auto HW = std::int64_t(ds.height) * ds.width;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      LabelMap m(Shape{ds.height, ds.width});
      std::copy_n(labels.data() + std::int64_t(i) * HW, HW, m.data());
      out.push_back(std::move(m));
    }
  }
  return out;
}

template <typename T>
MetricReport evaluate_network(SegNetwork<T>& net, const Dataset& ds, const std::vector<std::string>& ids,
                              int eval_batch = 16, const EvalOptions& opt = {}) {
  if (ids.empty()) throw ArgumentError("evaluation split is empty");
  std::vector<LabelMap> gts;
  for (const auto& id : ids) gts.push_back(ds.masks[ds.index_of(id)]);
  return evaluate(predict(net, ds, ids, eval_batch), gts, ds.num_classes, opt);
}

// Metrics of the checkpoint's test network on the given cases.
template <typename T>
MetricReport evaluate_checkpoint(const CheckpointRecord<T>& record, const FrameworkSpec& spec,
                                 const BackboneConfig& backbones, const Dataset& ds,
                                 const std::vector<std::string>& ids, int eval_batch = 16) {
  if (ids.empty()) throw ArgumentError("evaluate_checkpoint: split is empty");
  const auto* node = spec.find(spec.test_node);
  if (!node) throw ConfigError("framework '" + spec.name + "' has no test node '" + spec.test_node + "'");
  auto it = record.networks.find(node->id);
  if (it == record.networks.end()) throw StructuralError("checkpoint lacks parameters for node '" + node->id + "'");
  Rng rng(0);
  auto net = make_network<T>(node->arch, backbones, rng);
  restore(net->params(), it->second);
  return evaluate_network(*net, ds, ids, eval_batch);
}

namespace train_detail {

template <typename T>
void write_checkpoint(const std::string& dir, const Assembly<T>& a, const CheckpointRecord<T>& rec,
                      const TrainConfig& cfg, const BackboneConfig& backbones) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const auto& h : a.handles())
    save_archive((fs::path(dir) / (h.id + ".s4ca")).string(), rec.networks.at(h.id), h.net->params().param_names(),
                 h.net->params().buffer_names());
  std::ofstream(fs::path(dir) / "framework.spec") << serialize(a.spec());
  KeyValueList kv{{"iteration", std::to_string(rec.iteration)},
                  {"framework", a.spec().name},
                  {"test_node", a.spec().test_node},
                  {"best", rec.best ? "true" : "false"}};
  for (const auto& [k, v] : to_key_values(cfg)) kv.push_back({"train." + k, v});
  for (const auto& [k, v] : to_key_values(backbones)) kv.push_back({"backbone." + k, v});
  const auto vals = rec.validation.values();
  for (std::size_t i = 0; i < vals.size(); ++i)
    kv.push_back({std::string("val.") + MetricReport::column_names()[i], config_detail::str(vals[i])});
  write_key_values((fs::path(dir) / "manifest.txt").string(), kv);
}

}  // namespace train_detail

struct TrainOutput {
  std::string dir;                   // empty: keep everything in memory
  std::ostream* progress = nullptr;  // one line per validation
  BackboneConfig backbones;          // recorded in checkpoint manifests
};

// Joint optimisation of every learner from the combined objective; teachers
// follow their sources by EMA after each step.
template <typename T>
TrainResult<T> train(Assembly<T>& a, const Dataset& ds, const SplitManifest& m, const TrainConfig& cfg,
                     const TrainOutput& out = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  for (const auto& id : cfg.frozen) {
    const int i = a.spec().index_of(id);
    if (i < 0 || a.handles()[i].is_teacher()) throw ConfigError("frozen node '" + id + "' is not a learner");
  }
  if (const auto err = check_manifest(m, ds); !err.empty()) throw DataError("manifest: " + err);
  for (auto& s : a.ema_states()) s.alpha_cap = cfg.ema_cap;
  const auto& val_ids = m.val.empty() ? m.train_labeled : m.val;
  const bool semi = std::any_of(a.terms().begin(), a.terms().end(), [](const LossTerm& t) { return t.kind == TermKind::Semi; });

  auto params = a.learner_params();
  std::erase_if(params, [&](const auto& p) {
    const auto node = p.first.substr(0, p.first.find('/'));
    return std::count(cfg.frozen.begin(), cfg.frozen.end(), node) > 0;
  });
  std::ofstream log;
  const auto labels = term_labels(a);
  if (!out.dir.empty()) {
    fs::create_directories(out.dir);
    log.open(fs::path(out.dir) / "metrics.log");
    if (!log) throw DataError("cannot write " + (fs::path(out.dir) / "metrics.log").string());
    log << "iteration\tlr\tlambda1\tlambda2\ttotal";
    for (const auto& l : labels) log << '\t' << l;
    log << "\tval_mIOU\n" << std::setprecision(9);
  }

  TrainResult<T> result;
  result.best.validation.miou = -1;
  SgdState<T> sgd;
  const RampSchedule ramp{std::max(cfg.max_iterations, 1L), cfg.ramp_update_every};

  auto validate = [&](long iteration) {
    auto rep = evaluate_network(*a.test_handle().net, ds, val_ids, cfg.eval_batch);
    result.val_miou.push_back({iteration, rep.miou});
    if (out.progress)
      *out.progress << a.spec().name << " iter " << iteration << " val mIOU " << std::fixed << std::setprecision(4)
                    << rep.miou << std::defaultfloat << '\n';
    if (rep.miou <= result.best.validation.miou) return rep.miou;
    CheckpointRecord<T> rec;
    rec.iteration = iteration;
    rec.validation = rep;
    rec.best = true;
    for (const auto& h : a.handles()) rec.networks.emplace(h.id, snapshot(h.net->params()));
    if (!out.dir.empty()) {
      rec.dir = (fs::path(out.dir) / ("ckpt_" + std::to_string(iteration))).string();
      if (!result.best.dir.empty() && !cfg.keep_all_checkpoints) fs::remove_all(result.best.dir);
      train_detail::write_checkpoint(rec.dir, a, rec, cfg, out.backbones);
      if (!result.best.dir.empty() && cfg.keep_all_checkpoints) {
        result.best.best = false;
        train_detail::write_checkpoint(result.best.dir, a, result.best, cfg, out.backbones);
      }
      std::ofstream(fs::path(out.dir) / "best.txt") << "ckpt_" << iteration << '\n';
    }
    result.best = std::move(rec);
    return rep.miou;
  };

  if (cfg.max_iterations == 0) validate(0);
  for (long t = 0; t < cfg.max_iterations; ++t) {
    const long iter = t + 1;
    const auto batch = next_batch<T>(ds, m, cfg.batch_size, cfg.seed, std::uint64_t(t), {cfg.augment, !semi});
    for (auto& h : a.handles()) h.net->params().zero_grad();
    const auto preds = a.forward(batch, cfg.perturb, mix_seed(mix_seed(cfg.seed, 0x7e57ull), std::uint64_t(t)));
    const double lambda = ramp_weight(iter, ramp);
    LossBreakdown bd;
    const auto loss = a.objective(preds, batch, lambda, lambda, &bd);
    if (!std::isfinite(bd.total)) {
      auto values = bd.sup;
      for (double v : bd.semi()) values.push_back(v);
      std::string parts;
      for (std::size_t i = 0; i < labels.size(); ++i) parts += " " + labels[i] + "=" + std::to_string(values[i]);
      throw NumericalError("non-finite loss at iteration " + std::to_string(iter) + ":" + parts);
    }
    backward(loss);
    const double lr = learning_rate(cfg, t);
    try {
      sgd_step(params, sgd, lr, cfg.momentum, cfg.weight_decay);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at iteration " + std::to_string(iter));
    }
    a.ema_step();
    result.losses.push_back(bd);
    result.lambdas.push_back(lambda);
    result.learning_rates.push_back(lr);

    double val = std::numeric_limits<double>::quiet_NaN();
    if (iter % cfg.eval_every == 0 || iter == cfg.max_iterations) val = validate(iter);
    if (log.is_open()) {
      log << iter << '\t' << lr << '\t' << bd.lambda1 << '\t' << bd.lambda2 << '\t' << bd.total;
      for (double v : bd.sup) log << '\t' << v;
      for (double v : bd.semi()) log << '\t' << v;
      log << '\t';
      if (!std::isnan(val)) log << val;
      log << '\n';
    }
  }
  return result;
}

// Reads a checkpoint directory written by train().
template <typename T>
CheckpointRecord<T> load_checkpoint(const std::string& dir, FrameworkSpec* spec = nullptr,
                                    BackboneConfig* backbones = nullptr, TrainConfig* cfg = nullptr) {
  namespace fs = std::filesystem;
  const auto kv = read_key_values((fs::path(dir) / "manifest.txt").string());
  std::ifstream sf(fs::path(dir) / "framework.spec");
  if (!sf) throw DataError("checkpoint " + dir + " lacks framework.spec");
  std::stringstream ss;
  ss << sf.rdbuf();
  const auto fs_spec = parse_spec(ss.str());
  CheckpointRecord<T> rec;
  rec.dir = dir;
  rec.iteration = std::stol(kv.at("iteration"));
  rec.best = kv.count("best") && kv.at("best") == "true";
  double* fields[] = {&rec.validation.mdice, &rec.validation.miou, &rec.validation.acc, &rec.validation.pre,
                      &rec.validation.sen,   &rec.validation.spe,  &rec.validation.hd,  &rec.validation.asd};
  for (std::size_t i = 0; i < 8; ++i) {
    auto it = kv.find(std::string("val.") + MetricReport::column_names()[i]);
    if (it != kv.end()) *fields[i] = std::stod(it->second);
  }
  for (const auto& n : fs_spec.nodes) {
    const auto path = (fs::path(dir) / (n.id + ".s4ca")).string();
    if (!fs::exists(path)) throw StructuralError("checkpoint " + dir + " lacks parameters for node '" + n.id + "'");
    rec.networks.emplace(n.id, load_archive<T>(path));
  }
  if (spec) *spec = fs_spec;
  if (backbones) apply_keys(with_prefix(kv, "backbone."), *backbones);
  if (cfg) apply_keys(with_prefix(kv, "train."), *cfg);
  return rec;
}

}  // namespace s4cv
