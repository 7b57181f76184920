#pragma once

// Experiment runs: one framework at one labeled ratio over several seeds,
// grids of such runs over ratios, and over supervision topologies.
//
// Layout of a single run directory:
//   run_config.txt   resolved RunConfig
//   splits.txt       split manifest
//   metrics.log, ckpt_<iter>/   from train()
//   test_report.txt  MetricReport of the best checkpoint on the test split

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "s4cv/experiments/figures.hpp"
#include "s4cv/train/trainer.hpp"

namespace s4cv {

struct RunConfig {
  std::string data_dir = "data";
  std::string framework = "W";  // preset name or path to a spec file
  double ratio = 0.1;
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "runs";
  int resize = 0;
  SplitOptions split;
  SynthConfig synth;  // used when data_dir holds no dataset yet
  TrainConfig train;
  BackboneConfig backbones;

  void validate() const {
    if (!(ratio > 0 && ratio <= 1)) throw ConfigError("ratio must be in (0, 1]");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (split.test_fraction < 0 || split.test_fraction >= 1) throw ConfigError("split.test_fraction must be in [0, 1)");
    if (split.val_fraction < 0 || split.val_fraction >= 1) throw ConfigError("split.val_fraction must be in [0, 1)");
    if (resize < 0) throw ConfigError("resize must be >= 0");
    train.validate();
  }
};

inline KeyValueList to_key_values(const RunConfig& c) {
  using config_detail::str;
  std::vector<std::string> seeds;
  for (auto s : c.seeds) seeds.push_back(std::to_string(s));
  KeyValueList kv{{"data_dir", c.data_dir},
                  {"framework", c.framework},
                  {"ratio", str(c.ratio)},
                  {"seeds", join(seeds)},
                  {"out_dir", c.out_dir},
                  {"resize", str(c.resize)},
                  {"split.test_fraction", str(c.split.test_fraction)},
                  {"split.val_fraction", str(c.split.val_fraction)},
                  {"synth.n", str(c.synth.n)},
                  {"synth.size", str(c.synth.size)},
                  {"synth.seed", str(c.synth.seed)},
                  {"synth.noise", str(c.synth.noise)}};
  for (const auto& [k, v] : to_key_values(c.train)) kv.push_back({"train." + k, v});
  for (const auto& [k, v] : to_key_values(c.backbones)) kv.push_back({"backbone." + k, v});
  return kv;
}

// Keys not present in kv keep their current values. Unknown keys are errors.
inline void apply_keys(const KeyValues& kv, RunConfig& c) {
  using namespace config_detail;
  static const std::vector<std::string> plain{"data_dir", "framework", "ratio",  "seeds",  "out_dir",
                                              "resize",   "split.test_fraction", "split.val_fraction",
                                              "synth.n",  "synth.size",          "synth.seed", "synth.noise"};
  for (const auto& [k, v] : kv)
    if (k.rfind("train.", 0) != 0 && k.rfind("backbone.", 0) != 0 &&
        std::find(plain.begin(), plain.end(), k) == plain.end())
      throw ConfigError("unknown config key '" + k + "'");
  if (auto it = kv.find("data_dir"); it != kv.end()) c.data_dir = it->second;
  if (auto it = kv.find("framework"); it != kv.end()) c.framework = it->second;
  if (auto it = kv.find("out_dir"); it != kv.end()) c.out_dir = it->second;
  get(kv, "ratio", c.ratio);
  get(kv, "resize", c.resize);
  get(kv, "split.test_fraction", c.split.test_fraction);
  get(kv, "split.val_fraction", c.split.val_fraction);
  get(kv, "synth.n", c.synth.n);
  get(kv, "synth.size", c.synth.size);
  get(kv, "synth.seed", c.synth.seed);
  get(kv, "synth.noise", c.synth.noise);
  if (auto it = kv.find("seeds"); it != kv.end()) {
    c.seeds.clear();
    for (int s : parse_int_list(it->second)) {
      if (s < 0) throw ConfigError("seeds must be non-negative");
      c.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  apply_keys(with_prefix(kv, "train."), c.train);
  apply_keys(with_prefix(kv, "backbone."), c.backbones);
  c.synth.classes = c.backbones.num_classes;
}

inline RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  apply_keys(read_key_values(path), c);
  return c;
}

inline FrameworkSpec resolve_framework(const std::string& name) {
  if (name.find('/') != std::string::npos || name.find(".spec") != std::string::npos)
    if (std::filesystem::exists(name)) return load_spec(name);
  return preset(name);
}

// Loads the dataset, generating the synthetic corpus first when the
// directory is empty or absent.
inline Dataset prepare_dataset(const RunConfig& c) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(fs::path(c.data_dir) / "images")) {
    auto sc = c.synth;
    sc.classes = c.backbones.num_classes;
    generate_synthetic(c.data_dir, sc);
  }
  return load_dataset(c.data_dir, {c.backbones.num_classes, c.resize});
}

// Per-seed test report and the seed average of the summary columns.
struct RunOutcome {
  std::string framework;
  double ratio = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricReport> per_seed;
  std::vector<long> best_iteration;
  MetricReport mean;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

inline MetricReport average_reports(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ArgumentError("average_reports: nothing to average");
  MetricReport m;
  double* f[] = {&m.mdice, &m.miou, &m.acc, &m.pre, &m.sen, &m.spe, &m.hd, &m.asd};
  for (int i = 0; i < 8; ++i) *f[i] = 0;
  for (const auto& r : reports) {
    const auto v = r.values();
    for (int i = 0; i < 8; ++i) *f[i] += v[i] / double(reports.size());
    m.per_image_iou.insert(m.per_image_iou.end(), r.per_image_iou.begin(), r.per_image_iou.end());
  }
  m.classes = reports.front().classes;
  const bool same = std::all_of(reports.begin(), reports.end(), [&](const MetricReport& r) {
    return r.classes == m.classes && r.per_class.size() == m.classes.size();
  });
  if (!same) {
    m.classes.clear();
    return m;
  }
  m.per_class.resize(m.classes.size());
  const double w = 1.0 / double(reports.size());
  for (const auto& r : reports)
    for (std::size_t j = 0; j < m.classes.size(); ++j) {
      auto& d = m.per_class[j];
      const auto& c = r.per_class[j];
      d.sim.dice += w * c.sim.dice, d.sim.iou += w * c.sim.iou, d.sim.acc += w * c.sim.acc;
      d.sim.pre += w * c.sim.pre, d.sim.sen += w * c.sim.sen, d.sim.spe += w * c.sim.spe;
      d.hd += w * c.hd, d.asd += w * c.asd;
    }
  return m;
}

inline MetricReport failed_report() {
  MetricReport m;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.mdice = m.miou = m.acc = m.pre = m.sen = m.spe = m.hd = m.asd = nan;
  return m;
}

inline std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

// Trains and tests one framework for every seed in c.seeds under c.out_dir.
template <typename T = float>
RunOutcome run_framework(const Dataset& ds, const FrameworkSpec& spec, const RunConfig& c,
                         std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  c.validate();
  require_valid(spec);
  RunOutcome out;
  out.framework = spec.name;
  out.ratio = c.ratio;
  out.seeds = c.seeds;
  fs::create_directories(c.out_dir);
  write_key_values((fs::path(c.out_dir) / "run_config.txt").string(), to_key_values(c));
  std::ofstream(fs::path(c.out_dir) / "framework.spec") << serialize(spec);
  for (auto seed : c.seeds) {
    const auto dir = fs::path(c.out_dir) / seed_dir_name(seed);
    fs::create_directories(dir);
    auto rc = c;
    rc.seeds = {seed};
    rc.train.seed = seed;
    rc.out_dir = dir.string();
    write_key_values((dir / "run_config.txt").string(), to_key_values(rc));
    const auto m = make_splits(ds.ids, c.ratio, seed, c.split);
    save_manifest((dir / "splits.txt").string(), m);
    if (m.test.empty()) throw ArgumentError("test split is empty; enlarge the dataset or split.test_fraction");
    Assembly<T> a(spec, c.backbones, seed);
    auto r = train(a, ds, m, rc.train, {dir.string(), progress, c.backbones});
    for (auto& h : a.handles()) restore(h.net->params(), r.best.networks.at(h.id));
    auto rep = evaluate_network(*a.test_handle().net, ds, m.test, c.train.eval_batch);
    write_report((dir / "test_report.txt").string(), rep,
                 {{"framework", spec.name}, {"seed", std::to_string(seed)},
                  {"best_iteration", std::to_string(r.best.iteration)}});
    out.per_seed.push_back(rep);
    out.best_iteration.push_back(r.best.iteration);
  }
  out.mean = average_reports(out.per_seed);
  write_report((fs::path(c.out_dir) / "test_report.txt").string(), out.mean, {{"framework", spec.name}});
  return out;
}

// As run_framework but any exception becomes RunOutcome::error.
template <typename T = float>
RunOutcome run_isolated(const Dataset& ds, const FrameworkSpec& spec, const RunConfig& c,
                        std::ostream* progress = nullptr) {
  try {
    return run_framework<T>(ds, spec, c, progress);
  } catch (const std::exception& e) {
    RunOutcome o;
    o.framework = spec.name;
    o.ratio = c.ratio;
    o.seeds = c.seeds;
    o.mean = failed_report();
    o.error = e.what();
    return o;
  }
}

inline std::string safe_name(std::string s) {
  for (auto& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') ch = '_';
  return s;
}

inline std::string percent_label(double ratio) {
  std::ostringstream os;
  os << ratio * 100 << '%';
  return os.str();
}

inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

inline void write_errors(const std::string& path, const std::vector<RunOutcome>& runs) {
  std::ofstream os(path);
  for (const auto& r : runs)
    if (!r.ok()) os << r.framework << '\t' << r.ratio << '\t' << r.error << '\n';
}

// ---- ratio sweep ----

inline const std::vector<double>& default_ratios() {
  static const std::vector<double> r{0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0};
  return r;
}

struct RatioSweep {
  std::vector<std::string> frameworks;
  std::vector<double> ratios;
  std::vector<std::vector<double>> miou;  // [framework][ratio]; NaN for failed cells
  std::vector<RunOutcome> runs;
};

// Outputs under base.out_dir: <framework>/ratio_<r>/..., ratio_miou.csv,
// ratio_miou.svg, errors.txt.
template <typename T = float>
RatioSweep sweep_ratios(const Dataset& ds, const std::vector<FrameworkSpec>& specs, const std::vector<double>& ratios,
                        const RunConfig& base, std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  if (specs.empty()) throw ArgumentError("ratio sweep needs at least one framework");
  if (ratios.empty()) throw ArgumentError("ratio sweep needs at least one ratio");
  RatioSweep s;
  s.ratios = ratios;
  for (const auto& spec : specs) {
    s.frameworks.push_back(spec.name);
    s.miou.emplace_back();
    for (double r : ratios) {
      auto c = base;
      c.ratio = r;
      c.out_dir = (fs::path(base.out_dir) / safe_name(spec.name) / ("ratio_" + config_detail::str(r))).string();
      auto o = run_isolated<T>(ds, spec, c, progress);
      s.miou.back().push_back(o.mean.miou);
      s.runs.push_back(std::move(o));
    }
  }
  fs::create_directories(base.out_dir);
  std::ofstream csv(fs::path(base.out_dir) / "ratio_miou.csv");
  csv << "Framework";
  for (double r : ratios) csv << ',' << percent_label(r);
  csv << '\n';
  std::vector<Series> series;
  std::vector<std::string> labels;
  for (double r : ratios) labels.push_back(percent_label(r));
  for (std::size_t i = 0; i < s.frameworks.size(); ++i) {
    csv << s.frameworks[i];
    for (double v : s.miou[i]) csv << ',' << csv_number(v);
    csv << '\n';
    series.push_back({s.frameworks[i], s.miou[i]});
  }
  write_line_chart_logx((fs::path(base.out_dir) / "ratio_miou.svg").string(), "mIOU by labeled ratio", ratios, labels,
                        series, "mIOU");
  write_errors((fs::path(base.out_dir) / "errors.txt").string(), s.runs);
  return s;
}

// ---- topology sweep ----

// Grid position of a spec: rows group the supervision mode, columns the
// network composition and the node used for testing.
struct GridCell {
  std::string row, col;
  std::size_t nets = 0;
  double cnn_share = 0;
};

inline GridCell grid_cell(const FrameworkSpec& s) {
  const auto learners = s.count(Role::Learner), teachers = s.count(Role::Teacher);
  GridCell c;
  c.nets = s.nodes.size();
  c.cnn_share = double(s.count(Arch::CNN)) / double(std::max<std::size_t>(1, c.nets));
  c.row = std::to_string(c.nets) + " nets: ";
  if (teachers == 0) c.row += learners > 1 ? "CPS" : "supervised";
  else c.row += learners > 1 ? "CPS + teacher" : "teacher";
  std::string archs;
  for (const auto& n : s.nodes) archs += (archs.empty() ? "" : "-") + to_string(n.arch);
  const auto* t = s.find(s.test_node);
  c.col = archs + " / test " + (t ? to_string(t->arch) + "(" + t->id + ")" : s.test_node);
  return c;
}

// One cell per spec; collisions get a numeric suffix on the column. Rows run
// from more to fewer networks, columns by increasing CNN share.
inline HeatmapGrid topology_grid(const std::vector<FrameworkSpec>& specs, const std::vector<double>& values) {
  std::vector<GridCell> cells;
  for (const auto& s : specs) {
    auto c = grid_cell(s);
    const auto base = c.col;
    auto taken = [&] {
      return std::any_of(cells.begin(), cells.end(), [&](const GridCell& o) { return o.row == c.row && o.col == c.col; });
    };
    for (int k = 2; taken(); ++k) c.col = base + " #" + std::to_string(k);
    cells.push_back(c);
  }
  auto rows = cells, cols = cells;
  std::stable_sort(rows.begin(), rows.end(), [](const GridCell& a, const GridCell& b) {
    return a.nets != b.nets ? a.nets > b.nets : a.row < b.row;
  });
  std::stable_sort(cols.begin(), cols.end(), [](const GridCell& a, const GridCell& b) { return a.cnn_share < b.cnn_share; });
  HeatmapGrid g;
  for (const auto& c : rows)
    if (std::find(g.rows.begin(), g.rows.end(), c.row) == g.rows.end()) g.rows.push_back(c.row);
  for (const auto& c : cols)
    if (std::find(g.cols.begin(), g.cols.end(), c.col) == g.cols.end()) g.cols.push_back(c.col);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  g.values.assign(g.rows.size(), std::vector<double>(g.cols.size(), nan));
  g.labels.assign(g.rows.size(), std::vector<std::string>(g.cols.size()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto r = std::find(g.rows.begin(), g.rows.end(), cells[i].row) - g.rows.begin();
    const auto c = std::find(g.cols.begin(), g.cols.end(), cells[i].col) - g.cols.begin();
    g.values[r][c] = i < values.size() ? values[i] : nan;
    g.labels[r][c] = specs[i].name;
  }
  return g;
}

inline void write_grid_csv(const std::string& path, const HeatmapGrid& g) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "mode";
  for (const auto& c : g.cols) os << ",\"" << c << '"';
  os << '\n';
  for (std::size_t r = 0; r < g.rows.size(); ++r) {
    os << '"' << g.rows[r] << '"';
    for (std::size_t c = 0; c < g.cols.size(); ++c) {
      os << ',';
      if (!g.labels[r][c].empty()) os << csv_number(g.values[r][c]);
    }
    os << '\n';
  }
}

struct TopologySweep {
  std::vector<RunOutcome> runs;
  std::vector<HeatmapGrid> grids;  // one per metric column
};

// Outputs under base.out_dir: <framework>/..., topology.csv, heatmap_<metric>.csv
// and .svg for each of the eight metrics, errors.txt.
template <typename T = float>
TopologySweep sweep_topologies(const Dataset& ds, const std::vector<FrameworkSpec>& specs, const RunConfig& base,
                               std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  if (specs.empty()) throw ArgumentError("topology sweep needs at least one spec");
  TopologySweep s;
  for (const auto& spec : specs) {
    auto c = base;
    c.out_dir = (fs::path(base.out_dir) / safe_name(spec.name)).string();
    s.runs.push_back(run_isolated<T>(ds, spec, c, progress));
  }
  fs::create_directories(base.out_dir);
  std::ofstream csv(fs::path(base.out_dir) / "topology.csv");
  csv << results_header() << '\n';
  for (const auto& r : s.runs) {
    csv << r.framework;
    for (double v : r.mean.values()) csv << ',' << csv_number(v);
    csv << '\n';
  }
  const auto names = MetricReport::column_names();
  for (std::size_t m = 0; m < names.size(); ++m) {
    std::vector<double> vals;
    for (const auto& r : s.runs) vals.push_back(r.mean.values()[m]);
    auto g = topology_grid(specs, vals);
    const auto stem = (fs::path(base.out_dir) / ("heatmap_" + std::string(names[m]))).string();
    write_grid_csv(stem + ".csv", g);
    write_heatmap(stem + ".svg", std::string(names[m]) + " by supervision topology", g, m >= 6);
    s.grids.push_back(std::move(g));
  }
  write_errors((fs::path(base.out_dir) / "errors.txt").string(), s.runs);
  return s;
}

}  // namespace s4cv
