#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage.
//
// Relative --out paths are placed under $S4CV_OUTPUT_ROOT when it is set.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "s4cv/experiments/sweep.hpp"

namespace s4cv::cli {

enum Exit : int { kOk = 0, kRuntime = 1, kUsage = 2 };

inline std::string output_path(const std::string& out) {
  const char* root = std::getenv("S4CV_OUTPUT_ROOT");
  if (!root || !*root || std::filesystem::path(out).is_absolute()) return out;
  return (std::filesystem::path(root) / out).string();
}

// Iteration budget and backbone sizes for a given profile.
inline void apply_profile(const std::string& profile, RunConfig& c) {
  if (profile == "paper") {
    c.train = TrainConfig{};
    c.backbones = BackboneConfig{};
    c.resize = 224;
  } else if (profile == "desk") {
    c.backbones = desk_backbones(4);
    c.train.max_iterations = 2000;
    c.train.batch_size = 8;
  } else {
    throw ArgumentError("unknown profile '" + profile + "' (expected desk or paper)");
  }
}

// Flags shared by the training commands; unset flags leave the config alone.
struct TrainFlags {
  std::string config, profile = "desk", data;
  std::optional<long> iterations, eval_every;
  std::optional<int> batch_size, classes, resize;
  std::optional<double> lr;
  std::optional<std::string> schedule;
  std::vector<std::uint64_t> seeds;

  void add(CLI::App* app) {
    app->add_option("--config", config, "key = value config file; flags override its entries");
    app->add_option("--profile", profile, "desk (small, 2000 iterations) or paper (full-size backbones)")
        ->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--data", data, "dataset directory (images/, masks/); synthesised if absent");
    app->add_option("--iterations", iterations, "training iterations")->check(CLI::NonNegativeNumber);
    app->add_option("--eval-every", eval_every, "validation interval")->check(CLI::PositiveNumber);
    app->add_option("--batch-size", batch_size, "batch size")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "initial learning rate")->check(CLI::PositiveNumber);
    app->add_option("--lr-schedule", schedule, "poly or constant")->check(CLI::IsMember({"poly", "constant"}));
    app->add_option("--classes", classes, "number of classes including background")->check(CLI::Range(2, 255));
    app->add_option("--resize", resize, "square input side (0 keeps source size)")->check(CLI::NonNegativeNumber);
  }

  RunConfig resolve() const {
    RunConfig c;
    apply_profile(profile, c);
    if (!config.empty()) apply_keys(read_key_values(config), c);
    if (!data.empty()) c.data_dir = data;
    if (iterations) c.train.max_iterations = *iterations;
    if (eval_every) c.train.eval_every = *eval_every;
    if (batch_size) c.train.batch_size = *batch_size;
    if (lr) c.train.lr0 = *lr;
    if (schedule) c.train.lr_schedule = parse_lr_schedule(*schedule);
    if (classes) c.backbones.num_classes = c.synth.classes = *classes;
    if (resize) c.resize = *resize;
    if (!seeds.empty()) c.seeds = seeds;
    return c;
  }
};

inline void print_summary(std::ostream& out, const SynthSummary& s) {
  out << "generated " << s.count << " cases\n";
  for (std::size_t k = 0; k < s.class_presence.size(); ++k)
    out << "  class " << k << " present in " << std::fixed << std::setprecision(1) << 100 * s.class_presence[k]
        << std::defaultfloat << "% of masks\n";
}

inline std::vector<double> parse_percent_list(const std::vector<double>& pct) {
  std::vector<double> r;
  for (double p : pct) {
    if (!(p > 0 && p <= 100)) throw ArgumentError("ratios are percentages in (0, 100]");
    r.push_back(p / 100.0);
  }
  return r;
}

inline std::vector<FrameworkSpec> resolve_specs(const std::vector<std::string>& names) {
  std::vector<FrameworkSpec> specs;
  for (const auto& n : names) {
    if (n == "ablation") {
      for (auto& s : ablation_presets()) specs.push_back(std::move(s));
    } else {
      specs.push_back(resolve_framework(n));
    }
  }
  if (specs.empty()) throw ArgumentError("no framework specs given");
  for (const auto& s : specs) require_valid(s);
  return specs;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Semi-supervised CNN/ViT segmentation experiments", "s4cv"};
  app.require_subcommand(1);

  SynthConfig synth;
  std::string synth_out;
  auto* c_synth = app.add_subcommand("synth", "generate the synthetic dataset");
  c_synth->add_option("--n", synth.n, "number of cases");
  c_synth->add_option("--classes", synth.classes, "classes including background");
  c_synth->add_option("--size", synth.size, "image side");
  c_synth->add_option("--seed", synth.seed, "generator seed");
  c_synth->add_option("--noise", synth.noise, "Gaussian noise std")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--out", synth_out, "output directory")->required();

  TrainFlags tf;
  std::string preset_name, train_out = "runs/train";
  std::optional<double> ratio;
  auto* c_train = app.add_subcommand("train", "train one framework and test its best checkpoint");
  tf.add(c_train);
  c_train->add_option("--preset", preset_name, "preset name or spec file");
  c_train->add_option("--ratio", ratio, "labeled fraction of the training pool, (0, 1]");
  c_train->add_option("--seed", tf.seeds, "seed(s); one run each")->delimiter(',');
  c_train->add_option("--out", train_out, "output directory");

  std::string ckpt, eval_data, manifest, split = "test", eval_report;
  auto* c_eval = app.add_subcommand("evaluate", "evaluate a checkpoint directory");
  c_eval->add_option("--checkpoint", ckpt, "ckpt_<iter> directory")->required();
  c_eval->add_option("--data", eval_data, "dataset directory")->required();
  c_eval->add_option("--manifest", manifest, "split manifest (splits.txt); default: every case");
  c_eval->add_option("--split", split, "test, val, train_labeled, train_unlabeled or all")
      ->check(CLI::IsMember({"test", "val", "train_labeled", "train_unlabeled", "all"}));
  c_eval->add_option("--report", eval_report, "write the MetricReport here");

  TrainFlags rf;
  std::vector<double> ratios_pct;
  std::vector<std::string> ratio_presets{"W", "SUP-ViT"};
  std::string ratio_out = "runs/ratio";
  auto* c_ratio = app.add_subcommand("sweep-ratio", "mIOU over labeled ratios");
  rf.add(c_ratio);
  c_ratio->add_option("--ratios", ratios_pct, "percentages, default 1,2,5,10,20,30,50,100")->delimiter(',');
  c_ratio->add_option("--presets", ratio_presets, "frameworks")->delimiter(',');
  c_ratio->add_option("--seeds", rf.seeds, "seeds")->delimiter(',');
  c_ratio->add_option("--out", ratio_out, "output directory");

  TrainFlags sf;
  std::vector<std::string> specs;
  std::string topo_out = "runs/topology";
  std::optional<double> topo_ratio;
  bool dry_run = false;
  auto* c_topo = app.add_subcommand("sweep-topology", "CSV and heatmaps over supervision topologies");
  sf.add(c_topo);
  c_topo->add_option("--specs", specs, "spec files or preset names; 'ablation' expands to the 17 ablation presets")
      ->delimiter(',');
  c_topo->add_option("--ratio", topo_ratio, "labeled fraction");
  c_topo->add_option("--seeds", sf.seeds, "seeds")->delimiter(',');
  c_topo->add_option("--out", topo_out, "output directory");
  c_topo->add_flag("--dry-run", dry_run, "no training: validate, evaluate initial weights, emit every artifact");

  std::vector<std::string> reports;
  std::string hist_out;
  int bins = 20;
  auto* c_hist = app.add_subcommand("hist", "cumulative per-image IOU histogram");
  c_hist->add_option("--reports", reports, "test_report.txt files")->required()->delimiter(',');
  c_hist->add_option("--out", hist_out, "output .svg (a .csv with the counts is written alongside)")->required();
  c_hist->add_option("--bins", bins, "threshold steps over [0,1]")->check(CLI::Range(1, 1000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kUsage;
  }

  std::ostream* progress = &err;
  try {
    if (*c_synth) {
      check_synth_config(synth);
      const auto dir = output_path(synth_out);
      print_summary(out, generate_synthetic(dir, synth));
      out << "written to " << dir << '\n';
      return kOk;
    }

    if (*c_train) {
      auto c = tf.resolve();
      if (!preset_name.empty()) c.framework = preset_name;
      if (ratio) c.ratio = *ratio;
      c.out_dir = output_path(train_out);
      c.validate();
      const auto spec = resolve_framework(c.framework);
      require_valid(spec);
      const auto ds = prepare_dataset(c);
      const auto r = run_framework(ds, spec, c, progress);
      std::ofstream csv(std::filesystem::path(c.out_dir) / "results.csv");
      csv << results_header() << '\n' << results_row(spec.name, r.mean) << '\n';
      out << results_header() << '\n' << results_row(spec.name, r.mean) << '\n';
      return kOk;
    }

    if (*c_eval) {
      FrameworkSpec spec;
      BackboneConfig bb;
      const auto rec = load_checkpoint<float>(ckpt, &spec, &bb);
      const auto ds = load_dataset(eval_data, {bb.num_classes, 0});
      std::vector<std::string> ids = ds.ids;
      if (!manifest.empty()) {
        const auto m = load_manifest(manifest);
        if (split == "test") ids = m.test;
        else if (split == "val") ids = m.val;
        else if (split == "train_labeled") ids = m.train_labeled;
        else if (split == "train_unlabeled") ids = m.train_unlabeled;
      } else if (split != "all" && split != "test") {
        throw ArgumentError("--split " + split + " needs --manifest");
      }
      const auto rep = evaluate_checkpoint(rec, spec, bb, ds, ids);
      if (!eval_report.empty()) write_report(output_path(eval_report), rep, {{"framework", spec.name}});
      out << results_header() << '\n' << results_row(spec.name, rep) << '\n';
      return kOk;
    }

    if (*c_ratio) {
      auto c = rf.resolve();
      c.out_dir = output_path(ratio_out);
      c.validate();
      const auto ratios = ratios_pct.empty() ? default_ratios() : parse_percent_list(ratios_pct);
      std::vector<FrameworkSpec> fw;
      for (const auto& p : ratio_presets) fw.push_back(resolve_framework(p));
      for (const auto& s : fw) require_valid(s);
      const auto ds = prepare_dataset(c);
      std::filesystem::create_directories(c.out_dir);
      write_key_values((std::filesystem::path(c.out_dir) / "run_config.txt").string(), to_key_values(c));
      const auto s = sweep_ratios(ds, fw, ratios, c, progress);
      std::ifstream csv(std::filesystem::path(c.out_dir) / "ratio_miou.csv");
      out << csv.rdbuf();
      int failed = 0;
      for (const auto& r : s.runs) failed += !r.ok();
      if (failed) err << failed << " run(s) failed; see errors.txt\n";
      return kOk;
    }

    if (*c_topo) {
      if (specs.empty()) throw ArgumentError("--specs is required (spec files, preset names, or 'ablation')");
      auto c = sf.resolve();
      if (topo_ratio) c.ratio = *topo_ratio;
      if (dry_run) {
        c.train.max_iterations = 0;
        c.seeds.resize(1);
        c.synth.n = std::min(c.synth.n, 40);
      }
      c.out_dir = output_path(topo_out);
      c.validate();
      const auto fw = resolve_specs(specs);
      const auto ds = prepare_dataset(c);
      std::filesystem::create_directories(c.out_dir);
      write_key_values((std::filesystem::path(c.out_dir) / "run_config.txt").string(), to_key_values(c));
      const auto s = sweep_topologies(ds, fw, c, dry_run ? nullptr : progress);
      std::ifstream csv(std::filesystem::path(c.out_dir) / "topology.csv");
      out << csv.rdbuf();
      int failed = 0;
      for (const auto& r : s.runs) failed += !r.ok();
      if (failed) err << failed << " spec(s) failed; see errors.txt\n";
      return kOk;
    }

    if (*c_hist) {
      const auto thresholds = unit_thresholds(bins);
      std::vector<std::pair<std::string, std::vector<int>>> series;
      for (const auto& path : reports) {
        const auto rep = read_report(path);
        if (rep.per_image_iou.empty()) throw DataError(path + " has no per-image IOU values");
        const auto kv = read_key_values(path);
        const auto name = kv.count("framework") ? kv.at("framework") : std::filesystem::path(path).stem().string();
        series.push_back({name, cumulative_counts(rep.per_image_iou, thresholds)});
      }
      const auto svg = output_path(hist_out);
      if (const auto parent = std::filesystem::path(svg).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
      write_cumulative_histogram(svg, "Cumulative IOU distribution", thresholds, series);
      std::ofstream csv(std::filesystem::path(svg).replace_extension(".csv"));
      csv << "threshold";
      for (const auto& [n, _] : series) csv << ',' << n;
      csv << '\n';
      for (std::size_t i = 0; i < thresholds.size(); ++i) {
        csv << thresholds[i];
        for (const auto& [_, counts] : series) csv << ',' << counts[i];
        csv << '\n';
      }
      out << "wrote " << svg << '\n';
      return kOk;
    }
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace s4cv::cli
