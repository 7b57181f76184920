#pragma once

// Supervision graphs.
//
// Spec file grammar (one statement per line, '#' starts a comment):
//   name = <label>
//   node <id> <CNN|ViT> <learner|teacher>
//   edge <src> <dst> <CPS|EMA>
//   test = <id>
//
// CPS: argmax of src supervises learner dst on unlabeled items.
// EMA: teacher dst tracks the weights of learner src.

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "s4cv/backbones/factory.hpp"
#include "s4cv/objectives/losses.hpp"
#include "s4cv/semi/supervision.hpp"

namespace s4cv {

enum class EdgeKind { CPS, EMA };

inline std::string to_string(EdgeKind k) { return k == EdgeKind::CPS ? "CPS" : "EMA"; }

struct NodeSpec {
  std::string id;
  Arch arch = Arch::CNN;
  Role role = Role::Learner;
};

struct EdgeSpec {
  std::string src, dst;
  EdgeKind kind = EdgeKind::CPS;

  std::string label() const { return src + "->" + dst + " (" + to_string(kind) + ")"; }
};

struct FrameworkSpec {
  std::string name;
  std::vector<NodeSpec> nodes;
  std::vector<EdgeSpec> edges;
  std::string test_node;

  const NodeSpec* find(const std::string& id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
  int index_of(const std::string& id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].id == id) return static_cast<int>(i);
    return -1;
  }
  std::size_t count(EdgeKind k) const {
    return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [k](const EdgeSpec& e) { return e.kind == k; }));
  }
  std::size_t count(Role r) const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [r](const NodeSpec& n) { return n.role == r; }));
  }
  std::size_t count(Arch a) const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [a](const NodeSpec& n) { return n.arch == a; }));
  }
};

struct Violation {
  std::string code;     // e.g. "arch mismatch"
  std::string subject;  // node id or edge label
  std::string message;
};

inline std::vector<Violation> validate(const FrameworkSpec& spec) {
  std::vector<Violation> out;
  auto add = [&out](std::string code, std::string subject, std::string msg) {
    out.push_back({std::move(code), std::move(subject), std::move(msg)});
  };
  std::map<std::string, int> seen;
  for (const auto& n : spec.nodes) {
    if (n.id.empty()) add("empty id", "", "node without an id");
    if (++seen[n.id] == 2) add("duplicate node", n.id, "node '" + n.id + "' declared more than once");
  }
  if (spec.count(Role::Learner) == 0) add("no learner", spec.name, "at least one learner is required");
  if (spec.test_node.empty()) add("missing test node", spec.name, "no test node designated");
  else if (!spec.find(spec.test_node)) add("unknown test node", spec.test_node, "test node '" + spec.test_node + "' is not declared");

  std::map<std::string, int> ema_in;
  std::map<std::string, int> edge_seen;
  for (const auto& e : spec.edges) {
    const auto label = e.label();
    if (++edge_seen[label] == 2) add("duplicate edge", label, "edge " + label + " declared more than once");
    const auto* s = spec.find(e.src);
    const auto* d = spec.find(e.dst);
    if (!s) add("unknown node", label, "edge source '" + e.src + "' is not declared");
    if (!d) add("unknown node", label, "edge target '" + e.dst + "' is not declared");
    if (!s || !d) continue;
    if (e.src == e.dst) {
      add("self loop", label, "edge " + label + " connects a node to itself");
      continue;
    }
    if (e.kind == EdgeKind::EMA) {
      if (s->role != Role::Learner) add("ema source not learner", label, "EMA source '" + e.src + "' must be a learner");
      if (d->role != Role::Teacher) add("ema target not teacher", label, "EMA target '" + e.dst + "' must be a teacher");
      if (s->arch != d->arch)
        add("arch mismatch", label, "EMA from " + to_string(s->arch) + " '" + e.src + "' to " + to_string(d->arch) + " '" + e.dst + "'");
      ++ema_in[e.dst];
    } else if (d->role != Role::Learner) {
      add("cps target not learner", label, "CPS target '" + e.dst + "' is a teacher and receives no gradient");
    }
  }
  for (const auto& n : spec.nodes)
    if (n.role == Role::Teacher && ema_in[n.id] != 1)
      add("teacher ema count", n.id,
          "teacher '" + n.id + "' has " + std::to_string(ema_in[n.id]) + " EMA sources (exactly one required)");
  return out;
}

inline std::string format_violations(const std::vector<Violation>& vs) {
  std::string s;
  for (const auto& v : vs) s += (s.empty() ? "" : "; ") + v.code + " [" + v.subject + "]: " + v.message;
  return s;
}

inline void require_valid(const FrameworkSpec& spec) {
  const auto vs = validate(spec);
  if (!vs.empty()) throw ConfigError("framework '" + spec.name + "': " + format_violations(vs));
}

// ---- text form ----

inline std::string serialize(const FrameworkSpec& spec) {
  std::ostringstream os;
  if (!spec.name.empty()) os << "name = " << spec.name << '\n';
  for (const auto& n : spec.nodes) os << "node " << n.id << ' ' << to_string(n.arch) << ' ' << to_string(n.role) << '\n';
  for (const auto& e : spec.edges) os << "edge " << e.src << ' ' << e.dst << ' ' << to_string(e.kind) << '\n';
  os << "test = " << spec.test_node << '\n';
  return os.str();
}

inline FrameworkSpec parse_spec(const std::string& text) {
  FrameworkSpec spec;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto fail = [&lineno](const std::string& msg) {
    throw ConfigError("spec line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (auto eq = line.find('='); eq != std::string::npos) {
      std::istringstream k(line.substr(0, eq)), v(line.substr(eq + 1));
      std::string key, value, extra;
      k >> key;
      v >> value;
      if (v >> extra) fail("unexpected text after '" + value + "'");
      if (key == "name") spec.name = value;
      else if (key == "test" || key == "test_node") spec.test_node = value;
      else fail("unknown key '" + key + "'");
      continue;
    }
    std::istringstream ls(line);
    std::string kw;
    if (!(ls >> kw)) continue;
    std::string a, b, c, extra;
    if (!(ls >> a >> b >> c) || (ls >> extra)) fail("expected '" + kw + "' followed by three fields");
    if (kw == "node") {
      Role role;
      if (c == "learner") role = Role::Learner;
      else if (c == "teacher") role = Role::Teacher;
      else fail("unknown role '" + c + "'");
      Arch arch;
      try {
        arch = parse_arch(b);
      } catch (const ArgumentError& e) {
        fail(e.what());
      }
      spec.nodes.push_back({a, arch, role});
    } else if (kw == "edge") {
      EdgeKind k;
      if (c == "CPS" || c == "cps") k = EdgeKind::CPS;
      else if (c == "EMA" || c == "ema") k = EdgeKind::EMA;
      else fail("unknown edge kind '" + c + "'");
      spec.edges.push_back({a, b, k});
    } else {
      fail("unknown statement '" + kw + "'");
    }
  }
  return spec;
}

inline FrameworkSpec load_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read framework spec " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  auto spec = parse_spec(ss.str());
  if (spec.name.empty()) {
    auto stem = path.substr(path.find_last_of('/') + 1);
    spec.name = stem.substr(0, stem.find('.'));
  }
  return spec;
}

// ---- presets ----

namespace preset_detail {

inline FrameworkSpec pair_cps(const std::string& name, Arch a, Arch b, const std::string& test) {
  return {name, {{"A", a, Role::Learner}, {"B", b, Role::Learner}}, {{"A", "B", EdgeKind::CPS}, {"B", "A", EdgeKind::CPS}}, test};
}

// Learner B guided by an EMA teacher C.
inline FrameworkSpec mean_teacher(const std::string& name, Arch arch, const std::string& test) {
  return {name,
          {{"B", arch, Role::Learner}, {"C", arch, Role::Teacher}},
          {{"B", "C", EdgeKind::EMA}, {"C", "B", EdgeKind::CPS}},
          test};
}

// Learners A, B with mutual pseudo labels; teacher C averages B and guides both.
inline FrameworkSpec triple(const std::string& name, Arch a, Arch bc, const std::string& test) {
  return {name,
          {{"A", a, Role::Learner}, {"B", bc, Role::Learner}, {"C", bc, Role::Teacher}},
          {{"A", "B", EdgeKind::CPS},
           {"B", "A", EdgeKind::CPS},
           {"B", "C", EdgeKind::EMA},
           {"C", "A", EdgeKind::CPS},
           {"C", "B", EdgeKind::CPS}},
          test};
}

struct Entry {
  std::string name;
  FrameworkSpec spec;
};

inline const std::vector<Entry>& ablation_rows() {
  static const std::vector<Entry> rows = [] {
    std::vector<Entry> r;
    auto add = [&r](FrameworkSpec s) { r.push_back({s.name, std::move(s)}); };
    for (const char* t : {"A", "B"}) add(pair_cps(std::string("ViT-ViT-CPS/") + t, Arch::ViT, Arch::ViT, t));
    for (const char* t : {"A", "B"}) add(pair_cps(std::string("CNN-CNN-CPS/") + t, Arch::CNN, Arch::CNN, t));
    for (const char* t : {"B", "C"}) add(mean_teacher(std::string("CNN-MT/") + t, Arch::CNN, t));
    for (const char* t : {"B", "C"}) add(mean_teacher(std::string("ViT-MT/") + t, Arch::ViT, t));
    for (const char* t : {"A", "B", "C"}) add(triple(std::string("ViT-ViT-ViT/") + t, Arch::ViT, Arch::ViT, t));
    for (const char* t : {"A", "B", "C"}) add(triple(std::string("CNN-CNN-CNN/") + t, Arch::CNN, Arch::CNN, t));
    for (const char* t : {"A", "B", "C"}) add(triple(std::string("CNN-ViT-ViT/") + t, Arch::CNN, Arch::ViT, t));
    return r;
  }();
  return rows;
}

inline FrameworkSpec supervised(const std::string& name, Arch a) { return {name, {{"A", a, Role::Learner}}, {}, "A"}; }

inline const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> a{
      {"W", "CNN-ViT-ViT/C"},   {"S4CVnet", "CNN-ViT-ViT/C"}, {"D", "CNN-MT/B"},
      {"MT", "CNN-MT/B"},       {"B", "ViT-ViT-CPS/B"},       {"C", "CNN-CNN-CPS/A"},
      {"E", "ViT-MT/C"},        {"ViT-ViT-CPS", "ViT-ViT-CPS/A"}, {"CNN-CNN-CPS", "CNN-CNN-CPS/A"},
      {"CNN-MT", "CNN-MT/B"},   {"ViT-MT", "ViT-MT/B"},       {"ViT-ViT-ViT", "ViT-ViT-ViT/C"},
      {"CNN-CNN-CNN", "CNN-CNN-CNN/C"}, {"CNN-ViT-ViT", "CNN-ViT-ViT/C"}};
  return a;
}

}  // namespace preset_detail

// The seventeen ablation configurations in table order.
inline std::vector<FrameworkSpec> ablation_presets() {
  std::vector<FrameworkSpec> out;
  for (const auto& e : preset_detail::ablation_rows()) out.push_back(e.spec);
  return out;
}

inline std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& e : preset_detail::ablation_rows()) names.push_back(e.name);
  for (const auto& [k, v] : preset_detail::aliases()) names.push_back(k);
  for (const char* s : {"CNN-ViT-CPS/A", "CNN-ViT-CPS/B", "SUP-CNN", "SUP-ViT"}) names.push_back(s);
  return names;
}

inline FrameworkSpec preset(const std::string& name) {
  using namespace preset_detail;
  std::string key = name;
  if (auto it = aliases().find(name); it != aliases().end()) key = it->second;
  for (const auto& e : ablation_rows())
    if (e.name == key) {
      auto s = e.spec;
      s.name = name;
      return s;
    }
  if (key == "CNN-ViT-CPS/A" || key == "CNN-ViT-CPS") return pair_cps(name, Arch::CNN, Arch::ViT, "A");
  if (key == "CNN-ViT-CPS/B") return pair_cps(name, Arch::CNN, Arch::ViT, "B");
  if (key == "SUP-CNN") return supervised(name, Arch::CNN);
  if (key == "SUP-ViT") return supervised(name, Arch::ViT);
  std::string list;
  for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
  throw ArgumentError("unknown preset '" + name + "'; available: " + list);
}

// ---- instantiation ----

enum class TermKind { Sup, Semi };
enum class LambdaGroup { None, Learner, Teacher };

struct LossTerm {
  TermKind kind = TermKind::Sup;
  int target = 0;   // handle index
  int source = -1;  // pseudo-label source for Semi
  LambdaGroup group = LambdaGroup::None;
};

template <typename T>
class Assembly {
 public:
  Assembly(FrameworkSpec spec, const BackboneConfig& cfg, std::uint64_t seed) : spec_(std::move(spec)) {
    require_valid(spec_);
    for (std::size_t i = 0; i < spec_.nodes.size(); ++i) {
      const auto& n = spec_.nodes[i];
      Rng rng(mix_seed(seed, i + 1));
      NetworkHandle<T> h{n.id, n.arch, n.role, make_network<T>(n.arch, cfg, rng), std::nullopt};
      if (n.role == Role::Teacher) h.net->params().set_trainable(false);
      handles_.push_back(std::move(h));
    }
    for (std::size_t i = 0; i < spec_.nodes.size(); ++i)
      if (spec_.nodes[i].role == Role::Learner) terms_.push_back({TermKind::Sup, int(i), -1, LambdaGroup::None});
    for (const auto& e : spec_.edges) {
      const int s = spec_.index_of(e.src), d = spec_.index_of(e.dst);
      if (e.kind == EdgeKind::EMA) {
        handles_[d].ema_source = e.src;
        ema_.push_back({d, s});
        ema_state_.emplace_back();
      } else {
        const auto g = handles_[s].is_teacher() ? LambdaGroup::Teacher : LambdaGroup::Learner;
        terms_.push_back({TermKind::Semi, d, s, g});
      }
    }
    test_ = spec_.index_of(spec_.test_node);
  }

  const FrameworkSpec& spec() const { return spec_; }
  std::vector<NetworkHandle<T>>& handles() { return handles_; }
  const std::vector<NetworkHandle<T>>& handles() const { return handles_; }
  const std::vector<LossTerm>& terms() const { return terms_; }
  NetworkHandle<T>& test_handle() { return handles_[test_]; }
  int test_index() const { return test_; }

  std::size_t count(TermKind k, LambdaGroup g = LambdaGroup::None) const {
    return static_cast<std::size_t>(std::count_if(terms_.begin(), terms_.end(), [&](const LossTerm& t) {
      return t.kind == k && (k == TermKind::Sup || t.group == g);
    }));
  }

  // Trainable parameters of every learner.
  std::vector<std::pair<std::string, Var<T>>> learner_params() {
    std::vector<std::pair<std::string, Var<T>>> out;
    for (auto& h : handles_)
      if (!h.is_teacher())
        for (const auto& n : h.net->params().param_names()) out.push_back({h.id + "/" + n, h.net->params().param(n)});
    return out;
  }

  std::vector<Prediction<T>> forward(const SegBatch<T>& batch, const PerturbConfig& noise, std::uint64_t seed) {
    return forward_all(batch, handles_, noise, seed);
  }

  // One term as a differentiable scalar, or nullopt when it has no items
  // (a consistency term on a batch without unlabeled images).
  std::optional<Var<T>> term_loss(std::size_t i, const std::vector<Prediction<T>>& preds, const SegBatch<T>& batch) const {
    const auto& t = terms_.at(i);
    const auto L = batch.labeled_count, U = batch.unlabeled_count();
    if (t.kind == TermKind::Sup) {
      if (L == 0) return std::nullopt;
      return sup_loss(narrow(preds[t.target].logits, 0, L), batch.masks);
    }
    if (U == 0) return std::nullopt;
    Prediction<T> tgt{narrow(preds[t.target].logits, L, U), preds[t.target].source, preds[t.target].tracks_grad};
    Prediction<T> src;
    {
      NoGradGuard ng;
      src = {narrow(preds[t.source].logits, L, U), preds[t.source].source, false};
    }
    return semi_loss(tgt, src);
  }

  // Weighted sum of all terms plus its scalar breakdown.
  Var<T> objective(const std::vector<Prediction<T>>& preds, const SegBatch<T>& batch, double lambda1, double lambda2,
                   LossBreakdown* breakdown = nullptr) const {
    std::vector<Var<T>> parts;
    std::vector<T> weights;
    std::vector<double> sup, l1, l2;
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      const auto v = term_loss(i, preds, batch);
      const double value = v ? double(v->value()[0]) : 0.0;
      const auto& t = terms_[i];
      double w = 1;
      if (t.kind == TermKind::Sup) sup.push_back(value);
      else if (t.group == LambdaGroup::Learner) l1.push_back(value), w = lambda1;
      else l2.push_back(value), w = lambda2;
      if (v) {
        parts.push_back(*v);
        weights.push_back(static_cast<T>(w));
      }
    }
    const auto b = total_loss(sup, l1, l2, lambda1, lambda2);
    if (breakdown) *breakdown = b;
    if (parts.empty()) return Var<T>::constant(Tensor<T>(Shape{}, T(0)));
    return weighted_sum<T>(parts, weights);
  }

  // Advances every teacher by one EMA step.
  void ema_step() {
    for (std::size_t i = 0; i < ema_.size(); ++i)
      ema_update(handles_[ema_[i].first], handles_[ema_[i].second], ema_state_[i]);
  }

  std::vector<EmaState>& ema_states() { return ema_state_; }

 private:
  FrameworkSpec spec_;
  std::vector<NetworkHandle<T>> handles_;
  std::vector<LossTerm> terms_;
  std::vector<std::pair<int, int>> ema_;  // (teacher, source)
  std::vector<EmaState> ema_state_;
  int test_ = 0;
};

}  // namespace s4cv
