#pragma once

// On-disk layout:
//   <dir>/images/<id>.png   8-bit gray
//   <dir>/masks/<id>.png    8-bit, pixel value = class id
//
// Manifest: optional "key = value" lines, then sections
//   [test] [val] [train_labeled] [train_unlabeled]
// with one id per line.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "s4cv/core/random.hpp"
#include "s4cv/data/batch.hpp"
#include "s4cv/data/png.hpp"

namespace s4cv {

struct Dataset {
  std::vector<std::string> ids;
  std::vector<std::vector<float>> images;  // H*W, values in [0, 1]
  std::vector<LabelMap> masks;             // [H, W]
  int height = 0, width = 0, num_classes = 0;

  std::size_t size() const { return ids.size(); }

  std::size_t index_of(const std::string& id) const {
    if (lookup_.size() != ids.size()) {
      lookup_.clear();
      for (std::size_t i = 0; i < ids.size(); ++i) lookup_[ids[i]] = i;
    }
    auto it = lookup_.find(id);
    if (it == lookup_.end()) throw DataError("unknown case id '" + id + "'");
    return it->second;
  }

 private:
  mutable std::map<std::string, std::size_t> lookup_;
};

// ---- synthetic data ----

struct SynthConfig {
  int n = 200;
  int classes = 4;
  int size = 64;
  std::uint64_t seed = 0;
  double noise = 0.1;  // std of additive Gaussian noise on [0,1] intensities
};

struct SynthSummary {
  int count = 0;
  std::vector<double> class_presence;  // fraction of masks containing each class
};

// Mean intensity of class k; background is darkest, the others are spread
// non-monotonically so that nesting order is not an intensity ramp.
inline double synth_level(int k) {
  if (k == 0) return 0.15;
  const double frac = std::fmod(k * 0.6180339887498949, 1.0);
  return 0.3 + 0.6 * frac;
}

inline void check_synth_config(const SynthConfig& c) {
  if (c.n < 4) throw ArgumentError("synthetic dataset: n must be >= 4, got " + std::to_string(c.n));
  if (c.classes < 2) throw ArgumentError("synthetic dataset: classes must be >= 2, got " + std::to_string(c.classes));
  if (c.classes > 255) throw ArgumentError("synthetic dataset: classes must fit in 8 bits");
  if (c.size < 4 * c.classes) throw ArgumentError("synthetic dataset: size must be >= 4 * classes");
  if (c.noise < 0) throw ArgumentError("synthetic dataset: noise must be >= 0");
}

inline std::string synth_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%04d", i);
  return buf;
}

// One case: nested ellipses labelled 1..K-1 from the outside in.
inline std::pair<GrayImage, GrayImage> synth_case(const SynthConfig& c, int index) {
  Rng rng(mix_seed(c.seed, static_cast<std::uint64_t>(index)));
  const int S = c.size, K = c.classes;
  const double cx = S / 2.0 + rng.uniform(-0.12, 0.12) * S, cy = S / 2.0 + rng.uniform(-0.12, 0.12) * S;
  const double theta = rng.uniform(0, std::numbers::pi);
  const double a = S * rng.uniform(0.24, 0.34), b = a * rng.uniform(0.65, 1.0);
  std::vector<double> scale(static_cast<std::size_t>(K), 1.0);
  for (int k = 2; k < K; ++k) scale[k] = scale[k - 1] - rng.uniform(0.7, 0.85) / (K - 1);
  std::vector<double> level(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) level[k] = synth_level(k) + rng.uniform(-0.04, 0.04);
  const double bias_dir = rng.uniform(0, 2 * std::numbers::pi), bias_amp = rng.uniform(0, 0.08);

  GrayImage mask{S, S, std::vector<std::uint8_t>(static_cast<std::size_t>(S) * S, 0)};
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (ct * dx + st * dy) / b, v = (-st * dx + ct * dy) / a;
      const double r = std::sqrt(u * u + v * v);
      int label = 0;
      for (int k = 1; k < K; ++k)
        if (r <= scale[k]) label = k;
      mask.pixels[y * S + x] = static_cast<std::uint8_t>(label);
    }
  // Each structure keeps at least its centre pixel.
  const int ccx = std::clamp(int(cx), 0, S - 1), ccy = std::clamp(int(cy), 0, S - 1);
  if (mask.pixels[ccy * S + ccx] == 0) mask.pixels[ccy * S + ccx] = static_cast<std::uint8_t>(K - 1);

  std::vector<double> clean(static_cast<std::size_t>(S) * S);
  for (int i = 0; i < S * S; ++i) clean[i] = level[mask.pixels[i]];
  GrayImage image{S, S, std::vector<std::uint8_t>(static_cast<std::size_t>(S) * S)};
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      double acc = 0;
      int cnt = 0;
      for (int j = -1; j <= 1; ++j)
        for (int i = -1; i <= 1; ++i) {
          const int yy = y + j, xx = x + i;
          if (yy < 0 || yy >= S || xx < 0 || xx >= S) continue;
          acc += clean[yy * S + xx];
          ++cnt;
        }
      const double bias = bias_amp * ((x - S / 2.0) * std::cos(bias_dir) + (y - S / 2.0) * std::sin(bias_dir)) / S;
      const double v = acc / cnt + bias + c.noise * rng.normal();
      image.pixels[y * S + x] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  return {image, mask};
}

inline SynthSummary generate_synthetic(const std::string& dir, const SynthConfig& c) {
  check_synth_config(c);
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  SynthSummary s;
  s.count = c.n;
  s.class_presence.assign(static_cast<std::size_t>(c.classes), 0.0);
  for (int i = 0; i < c.n; ++i) {
    const auto [image, mask] = synth_case(c, i);
    const auto id = synth_id(i);
    write_png((fs::path(dir) / "images" / (id + ".png")).string(), image);
    write_png((fs::path(dir) / "masks" / (id + ".png")).string(), mask);
    std::vector<bool> seen(static_cast<std::size_t>(c.classes), false);
    for (auto v : mask.pixels) seen[v] = true;
    for (int k = 0; k < c.classes; ++k) s.class_presence[k] += seen[k] ? 1.0 / c.n : 0.0;
  }
  return s;
}

// ---- loading ----

struct LoadOptions {
  int num_classes = 4;
  int resize = 0;  // square target side; 0 keeps the source size
};

namespace data_detail {

inline std::vector<float> resize_bilinear(const std::vector<float>& src, int h, int w, int H, int W) {
  std::vector<float> out(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    const double sy = std::clamp((y + 0.5) * h / H - 0.5, 0.0, double(h - 1));
    const int y0 = int(sy), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < W; ++x) {
      const double sx = std::clamp((x + 0.5) * w / W - 0.5, 0.0, double(w - 1));
      const int x0 = int(sx), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
      const double bot = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
      out[y * W + x] = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return out;
}

inline std::vector<std::uint8_t> resize_nearest(const std::vector<std::uint8_t>& src, int h, int w, int H, int W) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    const int sy = std::min(h - 1, int((y + 0.5) * h / H));
    for (int x = 0; x < W; ++x) out[y * W + x] = src[sy * w + std::min(w - 1, int((x + 0.5) * w / W))];
  }
  return out;
}

}  // namespace data_detail

inline Dataset load_dataset(const std::string& dir, const LoadOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (opt.num_classes < 2) throw ArgumentError("load_dataset: num_classes must be >= 2");
  const fs::path img_dir = fs::path(dir) / "images", mask_dir = fs::path(dir) / "masks";
  if (!fs::is_directory(img_dir)) throw DataError("missing directory " + img_dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(img_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw DataError("no images in " + img_dir.string());
  Dataset ds;
  ds.num_classes = opt.num_classes;
  for (const auto& id : ids) {
    const auto mpath = mask_dir / (id + ".png");
    if (!fs::exists(mpath)) throw DataError("missing mask for '" + id + "': expected " + mpath.string());
    const auto img = read_png((img_dir / (id + ".png")).string());
    const auto mask = read_png(mpath.string());
    if (img.height != mask.height || img.width != mask.width)
      throw DataError("image and mask sizes differ for '" + id + "'");
    for (auto v : mask.pixels)
      if (v >= opt.num_classes)
        throw DataError("mask " + mpath.string() + " contains class " + std::to_string(v) + " >= " +
                        std::to_string(opt.num_classes));
    const int H = opt.resize > 0 ? opt.resize : img.height, W = opt.resize > 0 ? opt.resize : img.width;
    if (ds.ids.empty()) {
      ds.height = H;
      ds.width = W;
    } else if (H != ds.height || W != ds.width) {
      throw DataError("image '" + id + "' is " + std::to_string(H) + "x" + std::to_string(W) + ", expected " +
                      std::to_string(ds.height) + "x" + std::to_string(ds.width) + " (set a resize target)");
    }
    std::vector<float> px(img.pixels.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = img.pixels[i] / 255.0f;
    auto labels = mask.pixels;
    if (H != img.height || W != img.width) {
      px = data_detail::resize_bilinear(px, img.height, img.width, H, W);
      labels = data_detail::resize_nearest(labels, img.height, img.width, H, W);
    }
    LabelMap m(Shape{H, W});
    for (std::size_t i = 0; i < labels.size(); ++i) m[static_cast<std::int64_t>(i)] = labels[i];
    ds.ids.push_back(id);
    ds.images.push_back(std::move(px));
    ds.masks.push_back(std::move(m));
  }
  return ds;
}

// ---- splits ----

struct SplitManifest {
  std::vector<std::string> test, val, train_labeled, train_unlabeled;
  double labeled_ratio = 0;
  std::uint64_t seed = 0;
};

struct SplitOptions {
  double test_fraction = 0.2;
  double val_fraction = 0.1;  // of the labeled pool; at least one case when > 0 and two are labeled
};

inline SplitManifest make_splits(std::vector<std::string> ids, double ratio, std::uint64_t seed,
                                 const SplitOptions& opt = {}) {
  if (!(ratio > 0 && ratio <= 1)) throw ArgumentError("labeled ratio must be in (0, 1], got " + std::to_string(ratio));
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ArgumentError("make_splits: duplicate ids");
  const auto n = static_cast<std::int64_t>(ids.size());
  const auto n_test = static_cast<std::int64_t>(std::floor(opt.test_fraction * double(n) + 1e-9));
  const auto n_train = n - n_test;
  auto n_lab = static_cast<std::int64_t>(std::floor(ratio * double(n_train) + 1e-9));
  n_lab = std::max<std::int64_t>(n_lab, 1);
  if (n_train < 1 || n_lab > n_train)
    throw ArgumentError("dataset of " + std::to_string(n) + " cases is too small for a labeled training case");
  std::int64_t n_val = 0;
  if (opt.val_fraction > 0 && n_lab >= 2)
    n_val = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(opt.val_fraction * double(n_lab) + 1e-9)));
  Rng rng(mix_seed(seed, 0x53504C4954ull));
  rng.shuffle(ids);
  SplitManifest m;
  m.labeled_ratio = ratio;
  m.seed = seed;
  auto take = [&ids](std::int64_t from, std::int64_t count) {
    std::vector<std::string> v(ids.begin() + from, ids.begin() + from + count);
    std::sort(v.begin(), v.end());
    return v;
  };
  m.test = take(0, n_test);
  m.val = take(n_test, n_val);
  m.train_labeled = take(n_test + n_val, n_lab - n_val);
  m.train_unlabeled = take(n_test + n_lab, n_train - n_lab);
  return m;
}

inline void save_manifest(const std::string& path, const SplitManifest& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path);
  os.precision(17);
  os << "labeled_ratio = " << m.labeled_ratio << "\nseed = " << m.seed << '\n';
  auto section = [&os](const char* name, const std::vector<std::string>& ids) {
    os << '[' << name << "]\n";
    for (const auto& id : ids) os << id << '\n';
  };
  section("test", m.test);
  section("val", m.val);
  section("train_labeled", m.train_labeled);
  section("train_unlabeled", m.train_unlabeled);
}

inline SplitManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read manifest " + path);
  SplitManifest m;
  std::vector<std::string>* cur = nullptr;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto b = line.find_first_not_of(" \t\r"), e = line.find_last_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    line = line.substr(b, e - b + 1);
    if (line.front() == '[') {
      if (line == "[test]") cur = &m.test;
      else if (line == "[val]") cur = &m.val;
      else if (line == "[train_labeled]") cur = &m.train_labeled;
      else if (line == "[train_unlabeled]") cur = &m.train_unlabeled;
      else throw DataError(path + ":" + std::to_string(lineno) + ": unknown section " + line);
    } else if (!cur) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": id outside a section");
      auto key = line.substr(0, eq), val = line.substr(eq + 1);
      key.erase(key.find_last_not_of(" \t") + 1);
      val.erase(0, val.find_first_not_of(" \t"));
      if (key == "labeled_ratio") m.labeled_ratio = std::stod(val);
      else if (key == "seed") m.seed = std::stoull(val);
    } else {
      cur->push_back(line);
    }
  }
  return m;
}

// Empty when the four lists are pairwise disjoint and drawn from the dataset.
inline std::string check_manifest(const SplitManifest& m, const Dataset& ds) {
  std::set<std::string> seen;
  for (const auto* list : {&m.test, &m.val, &m.train_labeled, &m.train_unlabeled})
    for (const auto& id : *list) {
      if (!seen.insert(id).second) return "id '" + id + "' appears in more than one split";
      try {
        ds.index_of(id);
      } catch (const DataError&) {
        return "id '" + id + "' is not in the dataset";
      }
    }
  return {};
}

// ---- batches ----

struct BatchOptions {
  bool augment = true;
  // Return only the labeled half a mixed batch would contain.
  bool labeled_only = false;
};

namespace data_detail {

// Item j of an endless stream of per-epoch permutations of a pool.
inline std::size_t stream_item(std::size_t pool, std::uint64_t seed, std::uint64_t tag, std::uint64_t j) {
  const std::uint64_t epoch = j / pool;
  std::vector<std::size_t> perm(pool);
  for (std::size_t i = 0; i < pool; ++i) perm[i] = i;
  Rng rng(mix_seed(mix_seed(seed, tag), epoch));
  rng.shuffle(perm);
  return perm[j % pool];
}

// Rotation by k quarter turns counter-clockwise, then optional horizontal flip.
template <typename U>
void augment(const U* src, U* dst, int H, int W, int k, bool flip) {
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int sy = y, sx = x;
      if (flip) sx = W - 1 - sx;
      switch (k) {
        case 1: std::tie(sy, sx) = std::pair{sx, W - 1 - sy}; break;
        case 2: std::tie(sy, sx) = std::pair{H - 1 - sy, W - 1 - sx}; break;
        case 3: std::tie(sy, sx) = std::pair{H - 1 - sx, sy}; break;
        default: break;
      }
      dst[y * W + x] = src[sy * W + sx];
    }
}

}  // namespace data_detail

// Deterministic in (seed, iteration). With unlabeled data the batch is half
// labeled, half unlabeled; otherwise fully labeled.
template <typename T>
SegBatch<T> next_batch(const Dataset& ds, const SplitManifest& m, int batch_size, std::uint64_t seed,
                       std::uint64_t iteration, const BatchOptions& opt = {}) {
  if (m.train_labeled.empty()) throw ArgumentError("next_batch: labeled pool is empty");
  if (batch_size <= 0) throw ArgumentError("next_batch: batch size must be positive");
  const bool mixed = !m.train_unlabeled.empty();
  if (mixed && batch_size % 2) throw ArgumentError("next_batch: batch size must be even when unlabeled data exists");
  const int L = mixed ? batch_size / 2 : batch_size;
  const int U = mixed && !opt.labeled_only ? batch_size / 2 : 0;
  const int H = ds.height, W = ds.width, HW = H * W;
  SegBatch<T> b;
  b.images = Tensor<T>(Shape{L + U, 1, H, W});
  b.masks = LabelMap(Shape{L, H, W});
  b.labeled_count = L;
  std::vector<float> img(static_cast<std::size_t>(HW));
  for (int s = 0; s < L + U; ++s) {
    const bool lab = s < L;
    const auto& pool = lab ? m.train_labeled : m.train_unlabeled;
    const std::uint64_t j = iteration * std::uint64_t(lab ? L : batch_size / 2) + std::uint64_t(lab ? s : s - L);
    const auto& id = pool[data_detail::stream_item(pool.size(), seed, lab ? 1 : 2, j)];
    const auto idx = ds.index_of(id);
    b.ids.push_back(id);
    int k = 0;
    bool flip = false;
    if (opt.augment) {
      Rng rng(mix_seed(mix_seed(seed, iteration), std::uint64_t(s) + 101));
      k = static_cast<int>(rng.below(4));
      if (H != W) k &= 2;
      flip = rng.below(2) == 1;
    }
    data_detail::augment(ds.images[idx].data(), img.data(), H, W, k, flip);
    for (int i = 0; i < HW; ++i) b.images[std::int64_t(s) * HW + i] = static_cast<T>(img[i]);
    if (lab) data_detail::augment(ds.masks[idx].data(), b.masks.data() + std::int64_t(s) * HW, H, W, k, flip);
  }
  return b;
}

// Un-augmented stack of the given cases: images [N,1,H,W] and masks [N,H,W].
template <typename T>
SegBatch<T> stack_cases(const Dataset& ds, const std::vector<std::string>& ids) {
  const int H = ds.height, W = ds.width, HW = H * W, N = static_cast<int>(ids.size());
  SegBatch<T> b;
  b.images = Tensor<T>(Shape{N, 1, H, W});
  b.masks = LabelMap(Shape{N, H, W});
  b.labeled_count = N;
  for (int s = 0; s < N; ++s) {
    const auto idx = ds.index_of(ids[s]);
    b.ids.push_back(ids[s]);
    for (int i = 0; i < HW; ++i) b.images[std::int64_t(s) * HW + i] = static_cast<T>(ds.images[idx][i]);
    std::copy_n(ds.masks[idx].data(), HW, b.masks.data() + std::int64_t(s) * HW);
  }
  return b;
}

}  // namespace s4cv
