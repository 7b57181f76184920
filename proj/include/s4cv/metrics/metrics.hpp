#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "s4cv/core/keyvalue.hpp"
#include "s4cv/data/batch.hpp"

namespace s4cv {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
};

// One-vs-rest counts for class k.
inline ConfusionCounts confusion(const LabelMap& pred, const LabelMap& gt, int k) {
  if (pred.shape() != gt.shape())
    throw DimensionError("confusion: prediction " + shape_str(pred.shape()) + " vs ground truth " +
                         shape_str(gt.shape()));
  ConfusionCounts c;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] == k, g = gt[i] == k;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct Similarity {
  double dice = 0, iou = 0, acc = 0, pre = 0, sen = 0, spe = 0;
};

// A ratio with an empty denominator is 1 when prediction and ground truth
// agree that the set is empty (fp = fn = 0) and 0 otherwise.
inline Similarity similarity_metrics(const ConfusionCounts& c) {
  const bool agree = c.fp == 0 && c.fn == 0;
  auto ratio = [agree](double num, std::int64_t den) { return den == 0 ? (agree ? 1.0 : 0.0) : num / double(den); };
  Similarity s;
  s.dice = ratio(2.0 * double(c.tp), 2 * c.tp + c.fp + c.fn);
  s.iou = ratio(double(c.tp), c.tp + c.fp + c.fn);
  s.acc = ratio(double(c.tp + c.tn), c.total());
  s.pre = ratio(double(c.tp), c.tp + c.fp);
  s.sen = ratio(double(c.tp), c.tp + c.fn);
  s.spe = ratio(double(c.tn), c.tn + c.fp);
  return s;
}

// Binary [H, W] mask.
using Mask = Tensor<std::uint8_t>;

inline Mask class_mask(const LabelMap& labels, int k) {
  if (labels.rank() != 2) throw DimensionError("class_mask: expected [H,W], got " + shape_str(labels.shape()));
  Mask m(labels.shape());
  for (std::int64_t i = 0; i < labels.numel(); ++i) m[i] = labels[i] == k ? 1 : 0;
  return m;
}

// Mask pixels with a 4-neighbour outside the mask or outside the image.
inline std::vector<std::int64_t> boundary(const Mask& m) {
  const auto H = m.dim(0), W = m.dim(1);
  std::vector<std::int64_t> out;
  auto in = [&](std::int64_t y, std::int64_t x) { return y >= 0 && y < H && x >= 0 && x < W && m[y * W + x]; };
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      if (m[y * W + x] && !(in(y - 1, x) && in(y + 1, x) && in(y, x - 1) && in(y, x + 1))) out.push_back(y * W + x);
  return out;
}

namespace metric_detail {

// Exact squared Euclidean distance transform (lower envelope of parabolas,
// one dimension at a time) to the given seed pixels.
inline std::vector<double> squared_distance_to(const std::vector<std::int64_t>& seeds, std::int64_t H, std::int64_t W) {
  const double inf = 1e20;
  std::vector<double> f(static_cast<std::size_t>(H * W), inf);
  for (auto s : seeds) f[s] = 0;
  auto pass = [inf](std::vector<double>& line) {
    const auto n = static_cast<std::int64_t>(line.size());
    std::vector<double> d(line.size()), z(line.size() + 1);
    std::vector<std::int64_t> v(line.size());
    std::int64_t k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (std::int64_t q = 1; q < n; ++q) {
      double s;
      while (true) {
        s = ((line[q] + double(q * q)) - (line[v[k]] + double(v[k] * v[k]))) / (2.0 * double(q - v[k]));
        if (s <= z[k] && k > 0) {
          --k;
          continue;
        }
        break;
      }
      if (s <= z[k]) {  // k == 0: q dominates from the start
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
    k = 0;
    for (std::int64_t q = 0; q < n; ++q) {
      while (z[k + 1] < double(q)) ++k;
      d[q] = double((q - v[k]) * (q - v[k])) + line[v[k]];
    }
    line.swap(d);
  };
  std::vector<double> col(static_cast<std::size_t>(H));
  for (std::int64_t x = 0; x < W; ++x) {
    for (std::int64_t y = 0; y < H; ++y) col[y] = f[y * W + x];
    pass(col);
    for (std::int64_t y = 0; y < H; ++y) f[y * W + x] = col[y];
  }
  std::vector<double> row(static_cast<std::size_t>(W));
  for (std::int64_t y = 0; y < H; ++y) {
    std::copy_n(f.begin() + y * W, W, row.begin());
    pass(row);
    std::copy(row.begin(), row.end(), f.begin() + y * W);
  }
  return f;
}

struct SurfaceDistances {
  double hd = 0, asd = 0;
};

inline SurfaceDistances surface_distances(const Mask& a, const Mask& b) {
  if (a.shape() != b.shape() || a.rank() != 2)
    throw DimensionError("surface distance: masks " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const auto H = a.dim(0), W = a.dim(1);
  const auto ba = boundary(a), bb = boundary(b);
  if (ba.empty() && bb.empty()) return {0, 0};
  if (ba.empty() || bb.empty()) {
    const double diag = std::hypot(double(H), double(W));
    return {diag, diag};
  }
  const auto da = squared_distance_to(ba, H, W), db = squared_distance_to(bb, H, W);
  double hd2 = 0, sum = 0;
  for (auto p : ba) {
    hd2 = std::max(hd2, db[p]);
    sum += std::sqrt(db[p]);
  }
  for (auto p : bb) {
    hd2 = std::max(hd2, da[p]);
    sum += std::sqrt(da[p]);
  }
  return {std::sqrt(hd2), sum / double(ba.size() + bb.size())};
}

}  // namespace metric_detail

// Symmetric Hausdorff distance between mask boundaries. Both empty: 0;
// exactly one empty: the image diagonal.
inline double hausdorff(const Mask& a, const Mask& b) { return metric_detail::surface_distances(a, b).hd; }

// Mean distance of every boundary pixel of either mask to the other boundary.
inline double asd(const Mask& a, const Mask& b) { return metric_detail::surface_distances(a, b).asd; }

struct ClassMetrics {
  Similarity sim;
  double hd = 0, asd = 0;
};

// Averages in the column order mDice, mIOU, Acc, Pre, Sen, Spe, HD, ASD.
struct MetricReport {
  double mdice = 0, miou = 0, acc = 0, pre = 0, sen = 0, spe = 0, hd = 0, asd = 0;
  std::vector<ClassMetrics> per_class;  // indexed by evaluated class
  std::vector<int> classes;
  std::vector<double> per_image_iou;  // mean over evaluated classes, one per case

  static const std::array<const char*, 8>& column_names() {
    static const std::array<const char*, 8> names{"mDice", "mIOU", "Acc", "Pre", "Sen", "Spe", "HD", "ASD"};
    return names;
  }
  std::array<double, 8> values() const { return {mdice, miou, acc, pre, sen, spe, hd, asd}; }
};

struct EvalOptions {
  bool include_background = false;
};

// Per-case, per-class metrics averaged over classes and cases.
inline MetricReport evaluate(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int K,
                             const EvalOptions& opt = {}) {
  if (preds.empty()) throw ArgumentError("evaluate: empty case set");
  if (preds.size() != gts.size())
    throw ArgumentError("evaluate: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(gts.size()) + " ground truths");
  if (K < 2) throw ArgumentError("evaluate: need at least two classes");
  MetricReport r;
  for (int k = opt.include_background ? 0 : 1; k < K; ++k) r.classes.push_back(k);
  r.per_class.resize(r.classes.size());
  const double n = double(preds.size()), nc = double(r.classes.size());
  for (std::size_t c = 0; c < preds.size(); ++c) {
    for (std::int64_t i = 0; i < gts[c].numel(); ++i)
      if (gts[c][i] < 0 || gts[c][i] >= K || (i < preds[c].numel() && (preds[c][i] < 0 || preds[c][i] >= K)))
        throw ArgumentError("evaluate: label outside [0, " + std::to_string(K) + ") in case " + std::to_string(c));
    double img_iou = 0;
    for (std::size_t j = 0; j < r.classes.size(); ++j) {
      const int k = r.classes[j];
      const auto s = similarity_metrics(confusion(preds[c], gts[c], k));
      const auto d = metric_detail::surface_distances(class_mask(preds[c], k), class_mask(gts[c], k));
      auto& pc = r.per_class[j];
      pc.sim.dice += s.dice / n;
      pc.sim.iou += s.iou / n;
      pc.sim.acc += s.acc / n;
      pc.sim.pre += s.pre / n;
      pc.sim.sen += s.sen / n;
      pc.sim.spe += s.spe / n;
      pc.hd += d.hd / n;
      pc.asd += d.asd / n;
      img_iou += s.iou / nc;
    }
    r.per_image_iou.push_back(img_iou);
  }
  for (const auto& pc : r.per_class) {
    r.mdice += pc.sim.dice / nc;
    r.miou += pc.sim.iou / nc;
    r.acc += pc.sim.acc / nc;
    r.pre += pc.sim.pre / nc;
    r.sen += pc.sim.sen / nc;
    r.spe += pc.sim.spe / nc;
    r.hd += pc.hd / nc;
    r.asd += pc.asd / nc;
  }
  return r;
}

// Flat "key = value" text; per-image IOU values space-separated.
inline void write_report(const std::string& path, const MetricReport& r,
                         const std::map<std::string, std::string>& extra = {}) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write report " + path);
  os.precision(17);
  for (const auto& [k, v] : extra) os << k << " = " << v << '\n';
  const auto vals = r.values();
  for (std::size_t i = 0; i < vals.size(); ++i) os << MetricReport::column_names()[i] << " = " << vals[i] << '\n';
  for (std::size_t j = 0; j < std::min(r.classes.size(), r.per_class.size()); ++j) {
    const auto& pc = r.per_class[j];
    const auto pre = "class" + std::to_string(r.classes[j]) + ".";
    os << pre << "Dice = " << pc.sim.dice << '\n' << pre << "IOU = " << pc.sim.iou << '\n';
    os << pre << "HD = " << pc.hd << '\n' << pre << "ASD = " << pc.asd << '\n';
  }
  os << "cases = " << r.per_image_iou.size() << '\n';
  os << "per_image_iou =";
  for (double v : r.per_image_iou) os << ' ' << v;
  os << '\n';
}

inline MetricReport read_report(const std::string& path) {
  const auto kv = read_key_values(path);
  MetricReport r;
  double* fields[] = {&r.mdice, &r.miou, &r.acc, &r.pre, &r.sen, &r.spe, &r.hd, &r.asd};
  for (std::size_t i = 0; i < 8; ++i) {
    const auto it = kv.find(MetricReport::column_names()[i]);
    if (it == kv.end()) throw DataError(path + " lacks " + MetricReport::column_names()[i]);
    *fields[i] = std::stod(it->second);
  }
  const auto it = kv.find("per_image_iou");
  if (it != kv.end()) {
    std::istringstream ss(it->second);
    double v;
    while (ss >> v) r.per_image_iou.push_back(v);
  }
  return r;
}

inline std::string results_header() {
  std::string h = "Framework";
  for (const auto* n : MetricReport::column_names()) h += std::string(",") + n;
  return h;
}

inline std::string results_row(const std::string& name, const MetricReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << name;
  for (double v : r.values()) os << ',' << v;
  return os.str();
}

}  // namespace s4cv
