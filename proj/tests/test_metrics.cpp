#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "oracles.hpp"
#include "s4cv/metrics/metrics.hpp"

using namespace s4cv;

namespace {

LabelMap random_labels(Rng& rng, std::int64_t H, std::int64_t W, int K) {
  LabelMap m(Shape{H, W});
  for (auto& v : m.values()) v = static_cast<std::int32_t>(rng.below(K));
  return m;
}

Mask random_mask(Rng& rng, std::int64_t H, std::int64_t W, double density) {
  Mask m(Shape{H, W});
  for (auto& v : m.values()) v = rng.uniform() < density ? 1 : 0;
  return m;
}

std::vector<int> to_ints(const Mask& m) { return {m.values().begin(), m.values().end()}; }

Mask single_pixel(std::int64_t H, std::int64_t W, std::int64_t y, std::int64_t x) {
  Mask m(Shape{H, W}, 0);
  m[y * W + x] = 1;
  return m;
}

ConfusionCounts random_counts(Rng& rng) {
  return {std::int64_t(rng.below(20)), std::int64_t(rng.below(20)), std::int64_t(rng.below(20)),
          std::int64_t(rng.below(20))};
}

}  // namespace

TEST(Confusion, IdentityHasNoErrors) {
  Rng rng(3);
  const auto gt = random_labels(rng, 8, 8, 4);
  for (int k = 0; k < 4; ++k) {
    const auto c = confusion(gt, gt, k);
    EXPECT_EQ(c.fp, 0);
    EXPECT_EQ(c.fn, 0);
    EXPECT_EQ(c.total(), 64);
  }
}

TEST(Confusion, TotalDisagreement) {
  LabelMap gt(Shape{2, 2}, std::vector<std::int32_t>{0, 1, 1, 0});
  LabelMap pred(Shape{2, 2}, std::vector<std::int32_t>{1, 0, 0, 1});
  const auto c = confusion(pred, gt, 1);
  EXPECT_EQ(c.tp, 0);
  EXPECT_EQ(c.tn, 0);
  EXPECT_EQ(c.fp, 2);
  EXPECT_EQ(c.fn, 2);
}

TEST(Confusion, MatchesCountingLoop) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_labels(rng, 8, 8, 4), g = random_labels(rng, 8, 8, 4);
    for (int k = 0; k < 4; ++k) {
      std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (int i = 0; i < 64; ++i) {
        tp += p[i] == k && g[i] == k;
        fp += p[i] == k && g[i] != k;
        fn += p[i] != k && g[i] == k;
        tn += p[i] != k && g[i] != k;
      }
      const auto c = confusion(p, g, k);
      EXPECT_EQ(c.tp, tp);
      EXPECT_EQ(c.fp, fp);
      EXPECT_EQ(c.fn, fn);
      EXPECT_EQ(c.tn, tn);
    }
  }
}

TEST(Confusion, ShapeMismatchThrows) {
  EXPECT_THROW(confusion(LabelMap(Shape{2, 2}), LabelMap(Shape{2, 3}), 0), DimensionError);
}

TEST(Similarity, HandEvaluation) {
  const auto s = similarity_metrics({2, 1, 1, 6});
  EXPECT_NEAR(s.dice, 4.0 / 6.0, 1e-12);
  EXPECT_NEAR(s.iou, 0.5, 1e-12);
  EXPECT_NEAR(s.acc, 0.8, 1e-12);
  EXPECT_NEAR(s.pre, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.sen, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.spe, 6.0 / 7.0, 1e-12);
}

TEST(Similarity, PerfectPredictionIsOne) {
  const auto s = similarity_metrics({5, 0, 0, 11});
  for (double v : {s.dice, s.iou, s.acc, s.pre, s.sen, s.spe}) EXPECT_EQ(v, 1.0);
}

TEST(Similarity, ZeroDenominatorConvention) {
  // absent from both
  auto s = similarity_metrics({0, 0, 0, 9});
  EXPECT_EQ(s.dice, 1.0);
  EXPECT_EQ(s.iou, 1.0);
  EXPECT_EQ(s.pre, 1.0);
  EXPECT_EQ(s.sen, 1.0);
  // predicted but absent from ground truth
  s = similarity_metrics({0, 3, 0, 6});
  EXPECT_EQ(s.dice, 0.0);
  EXPECT_EQ(s.sen, 0.0);
  // present in ground truth, never predicted
  s = similarity_metrics({0, 0, 3, 6});
  EXPECT_EQ(s.dice, 0.0);
  EXPECT_EQ(s.pre, 0.0);
}

TEST(Similarity, IdentitiesOnRandomCounts) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = random_counts(rng);
    const auto s = similarity_metrics(c);
    EXPECT_NEAR(s.dice, 2 * s.iou / (1 + s.iou), 1e-12);
    if (c.tp + c.fn > 0) {
      EXPECT_NEAR(s.sen, double(c.tp) / double(c.tp + c.fn), 1e-15);
    }
    for (double v : {s.dice, s.iou, s.acc, s.pre, s.sen, s.spe}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Boundary, InteriorPixelsExcluded) {
  Mask m(Shape{5, 5}, 1);
  const auto b = boundary(m);
  EXPECT_EQ(b.size(), 16u);
  EXPECT_EQ(std::count(b.begin(), b.end(), 12), 0);
}

TEST(SurfaceDistance, IdenticalMasksAreZero) {
  Rng rng(9);
  const auto m = random_mask(rng, 8, 8, 0.5);
  EXPECT_EQ(hausdorff(m, m), 0.0);
  EXPECT_EQ(asd(m, m), 0.0);
}

TEST(SurfaceDistance, SinglePixels) {
  const auto a = single_pixel(8, 8, 0, 0), b = single_pixel(8, 8, 3, 4);
  EXPECT_NEAR(hausdorff(a, b), 5.0, 1e-12);
  EXPECT_NEAR(asd(a, b), 5.0, 1e-12);
}

TEST(SurfaceDistance, EmptyConventions) {
  const Mask empty(Shape{6, 8}, 0);
  EXPECT_EQ(hausdorff(empty, empty), 0.0);
  EXPECT_EQ(asd(empty, empty), 0.0);
  const auto one = single_pixel(6, 8, 2, 2);
  EXPECT_NEAR(hausdorff(one, empty), 10.0, 1e-12);
  EXPECT_NEAR(asd(empty, one), 10.0, 1e-12);
}

TEST(SurfaceDistance, MatchesAllPairsOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_mask(rng, 8, 8, rng.uniform(0.05, 0.6));
    const auto b = random_mask(rng, 8, 8, rng.uniform(0.05, 0.6));
    const auto [hd, ad] = oracle::surface_all_pairs(to_ints(a), to_ints(b), 8, 8);
    EXPECT_NEAR(hausdorff(a, b), hd, 1e-9);
    EXPECT_NEAR(asd(a, b), ad, 1e-9);
    EXPECT_EQ(hausdorff(a, b), hausdorff(b, a));
    EXPECT_NEAR(asd(a, b), asd(b, a), 1e-12);
    EXPECT_LE(asd(a, b), hausdorff(a, b) + 1e-12);
  }
}

TEST(SurfaceDistance, MatchesAllPairsOnRectangularImages) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_mask(rng, 13, 29, 0.1), b = random_mask(rng, 13, 29, 0.02);
    const auto [hd, ad] = oracle::surface_all_pairs(to_ints(a), to_ints(b), 13, 29);
    EXPECT_NEAR(hausdorff(a, b), hd, 1e-9);
    EXPECT_NEAR(asd(a, b), ad, 1e-9);
  }
}

TEST(Evaluate, PerfectPredictions) {
  Rng rng(13);
  std::vector<LabelMap> gts;
  for (int i = 0; i < 3; ++i) gts.push_back(random_labels(rng, 8, 8, 4));
  const auto r = evaluate(gts, gts, 4);
  EXPECT_EQ(r.mdice, 1.0);
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_EQ(r.hd, 0.0);
  EXPECT_EQ(r.asd, 0.0);
  EXPECT_EQ(r.per_class.size(), 3u);
  EXPECT_EQ(r.per_image_iou, std::vector<double>(3, 1.0));
}

TEST(Evaluate, ColumnOrder) {
  const std::vector<std::string> expect{"mDice", "mIOU", "Acc", "Pre", "Sen", "Spe", "HD", "ASD"};
  std::vector<std::string> got(MetricReport::column_names().begin(), MetricReport::column_names().end());
  EXPECT_EQ(got, expect);
  EXPECT_EQ(results_header(), "Framework,mDice,mIOU,Acc,Pre,Sen,Spe,HD,ASD");
}

TEST(Evaluate, SingleBinaryCaseMatchesComposedOracles) {
  Rng rng(17);
  const auto p = random_labels(rng, 8, 8, 2), g = random_labels(rng, 8, 8, 2);
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (int i = 0; i < 64; ++i) {
    tp += p[i] == 1 && g[i] == 1;
    fp += p[i] == 1 && g[i] == 0;
    fn += p[i] == 0 && g[i] == 1;
    tn += p[i] == 0 && g[i] == 0;
  }
  std::vector<int> pm(64), gm(64);
  for (int i = 0; i < 64; ++i) {
    pm[i] = p[i] == 1;
    gm[i] = g[i] == 1;
  }
  const auto [hd, ad] = oracle::surface_all_pairs(pm, gm, 8, 8);
  const auto r = evaluate({p}, {g}, 2);
  EXPECT_NEAR(r.mdice, 2.0 * tp / double(2 * tp + fp + fn), 1e-12);
  EXPECT_NEAR(r.miou, tp / double(tp + fp + fn), 1e-12);
  EXPECT_NEAR(r.acc, (tp + tn) / 64.0, 1e-12);
  EXPECT_NEAR(r.pre, tp / double(tp + fp), 1e-12);
  EXPECT_NEAR(r.sen, tp / double(tp + fn), 1e-12);
  EXPECT_NEAR(r.spe, tn / double(tn + fp), 1e-12);
  EXPECT_NEAR(r.hd, hd, 1e-9);
  EXPECT_NEAR(r.asd, ad, 1e-9);
}

TEST(Evaluate, PermutationInvariant) {
  Rng rng(19);
  std::vector<LabelMap> p, g;
  for (int i = 0; i < 6; ++i) {
    p.push_back(random_labels(rng, 8, 8, 3));
    g.push_back(random_labels(rng, 8, 8, 3));
  }
  const auto a = evaluate(p, g, 3);
  std::vector<int> idx(6);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::vector<LabelMap> p2, g2;
  for (int i : idx) {
    p2.push_back(p[i]);
    g2.push_back(g[i]);
  }
  const auto b = evaluate(p2, g2, 3);
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_NEAR(va[i], vb[i], 1e-12);
}

TEST(Evaluate, BackgroundIsConfigurable) {
  Rng rng(21);
  const auto p = random_labels(rng, 8, 8, 3), g = random_labels(rng, 8, 8, 3);
  EXPECT_EQ(evaluate({p}, {g}, 3).classes, (std::vector<int>{1, 2}));
  EXPECT_EQ(evaluate({p}, {g}, 3, {.include_background = true}).classes, (std::vector<int>{0, 1, 2}));
}

TEST(Evaluate, Errors) {
  EXPECT_THROW(evaluate({}, {}, 2), ArgumentError);
  LabelMap bad(Shape{2, 2}, 5);
  EXPECT_THROW(evaluate({bad}, {bad}, 2), ArgumentError);
  EXPECT_THROW(evaluate({LabelMap(Shape{2, 2}, 0)}, {LabelMap(Shape{2, 3}, 0)}, 2), DimensionError);
}

TEST(Report, FileRoundTripAndRow) {
  Rng rng(23);
  const auto p = random_labels(rng, 8, 8, 4), g = random_labels(rng, 8, 8, 4);
  const auto r = evaluate({p, g}, {g, p}, 4);
  const auto path = (std::filesystem::temp_directory_path() / "s4cv_report_test.txt").string();
  write_report(path, r, {{"framework", "toy"}});
  const auto back = read_report(path);
  const auto va = r.values(), vb = back.values();
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_DOUBLE_EQ(va[i], vb[i]);
  EXPECT_EQ(back.per_image_iou.size(), 2u);
  EXPECT_EQ(read_key_values(path).at("framework"), "toy");
  std::filesystem::remove(path);
  const auto row = results_row("toy", r);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 8);
  EXPECT_EQ(row.substr(0, 4), "toy,");
}
