#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "s4cv/topology/framework.hpp"

using namespace s4cv;

namespace {

BackboneConfig toy_backbones() {
  BackboneConfig c;
  c.cnn.widths = {2, 4};
  c.vit.embed_dim = 4;
  c.vit.num_heads = {1, 2};
  c.vit.window_size = 2;
  c.vit.patch_size = 2;
  c.vit.mlp_ratio = 1;
  c.num_classes = 3;
  return c;
}

SegBatch<double> toy_batch(Rng& rng, int labeled, int unlabeled) {
  SegBatch<double> b;
  b.images = oracle::random_tensor({labeled + unlabeled, 1, 8, 8}, rng, 0, 1);
  b.masks = LabelMap(Shape{labeled, 8, 8});
  for (auto& v : b.masks.values()) v = static_cast<std::int32_t>(rng.below(3));
  b.labeled_count = labeled;
  return b;
}

bool has_code(const std::vector<Violation>& vs, const std::string& code) {
  return std::any_of(vs.begin(), vs.end(), [&](const Violation& v) { return v.code == code; });
}

double grad_mass(NetworkHandle<double>& h) {
  double s = 0;
  for (const auto& n : h.net->params().param_names()) {
    for (auto g : h.net->params().param(n).grad().values()) s += std::abs(g);
  }
  return s;
}

}  // namespace

TEST(Validate, W) {
  const auto w = preset("W");
  EXPECT_TRUE(validate(w).empty()) << format_violations(validate(w));
  EXPECT_EQ(w.test_node, "C");
  EXPECT_EQ(w.find("C")->role, Role::Teacher);
  EXPECT_EQ(w.find("C")->arch, Arch::ViT);
  EXPECT_EQ(w.find("A")->arch, Arch::CNN);
  EXPECT_EQ(w.find("B")->arch, Arch::ViT);
}

TEST(Validate, EmaArchMismatch) {
  FrameworkSpec s{"bad", {{"A", Arch::CNN, Role::Learner}, {"T", Arch::ViT, Role::Teacher}}, {{"A", "T", EdgeKind::EMA}}, "T"};
  const auto vs = validate(s);
  ASSERT_TRUE(has_code(vs, "arch mismatch"));
  EXPECT_EQ(vs[0].subject, "A->T (EMA)");
}

TEST(Validate, TeacherWithTwoSources) {
  FrameworkSpec s{"bad",
                  {{"A", Arch::ViT, Role::Learner}, {"B", Arch::ViT, Role::Learner}, {"T", Arch::ViT, Role::Teacher}},
                  {{"A", "T", EdgeKind::EMA}, {"B", "T", EdgeKind::EMA}},
                  "T"};
  const auto vs = validate(s);
  ASSERT_TRUE(has_code(vs, "teacher ema count"));
  EXPECT_EQ(vs.back().subject, "T");
}

TEST(Validate, OtherInvariants) {
  FrameworkSpec s{"bad", {{"T", Arch::ViT, Role::Teacher}}, {{"T", "T", EdgeKind::CPS}}, "Z"};
  const auto vs = validate(s);
  EXPECT_TRUE(has_code(vs, "no learner"));
  EXPECT_TRUE(has_code(vs, "unknown test node"));
  EXPECT_TRUE(has_code(vs, "self loop"));
  EXPECT_TRUE(has_code(vs, "teacher ema count"));

  FrameworkSpec t{"bad",
                  {{"A", Arch::ViT, Role::Learner}, {"T", Arch::ViT, Role::Teacher}},
                  {{"A", "T", EdgeKind::EMA}, {"A", "T", EdgeKind::CPS}, {"A", "Q", EdgeKind::CPS}},
                  "A"};
  const auto vt = validate(t);
  EXPECT_TRUE(has_code(vt, "cps target not learner"));
  EXPECT_TRUE(has_code(vt, "unknown node"));
  EXPECT_THROW(require_valid(t), ConfigError);
}

TEST(Presets, AblationListHasSeventeenValidRows) {
  const auto rows = ablation_presets();
  ASSERT_EQ(rows.size(), 17u);
  for (const auto& s : rows) EXPECT_TRUE(validate(s).empty()) << s.name << ": " << format_violations(validate(s));
  EXPECT_EQ(rows.front().name, "ViT-ViT-CPS/A");
  EXPECT_EQ(rows.back().name, "CNN-ViT-ViT/C");
  std::set<std::string> names;
  for (const auto& s : rows) names.insert(s.name);
  EXPECT_EQ(names.size(), 17u);
}

TEST(Presets, EveryShippedPresetValidates) {
  for (const auto& n : preset_names()) EXPECT_TRUE(validate(preset(n)).empty()) << n;
}

TEST(Presets, WMatchesLastAblationRow) {
  const auto w = preset("W"), row = ablation_presets().back();
  EXPECT_EQ(serialize(w).substr(serialize(w).find('\n')), serialize(row).substr(serialize(row).find('\n')));
}

TEST(Presets, CnnPairHasNoTeacher) {
  const auto s = preset("CNN-CNN-CPS");
  EXPECT_EQ(s.count(Role::Teacher), 0u);
  EXPECT_EQ(s.count(EdgeKind::CPS), 2u);
  EXPECT_EQ(s.count(EdgeKind::EMA), 0u);
}

TEST(Presets, MeanTeacherAndSupervised) {
  const auto d = preset("D");
  EXPECT_EQ(d.count(Role::Teacher), 1u);
  EXPECT_EQ(d.count(Arch::CNN), 2u);
  const auto sup = preset("SUP-ViT");
  EXPECT_EQ(sup.nodes.size(), 1u);
  EXPECT_TRUE(sup.edges.empty());
}

TEST(Presets, UnknownNameListsAlternatives) {
  try {
    preset("nope");
    FAIL();
  } catch (const ArgumentError& e) {
    EXPECT_NE(std::string(e.what()).find("CNN-ViT-ViT/C"), std::string::npos);
  }
}

TEST(SpecText, RoundTrip) {
  for (const auto& s : ablation_presets()) {
    const auto back = parse_spec(serialize(s));
    EXPECT_EQ(serialize(back), serialize(s));
  }
  const auto parsed = parse_spec("# comment\nname = x\nnode P vit learner\nnode Q CNN learner  # trailing\nedge P Q cps\ntest = Q\n");
  EXPECT_EQ(parsed.nodes[0].arch, Arch::ViT);
  EXPECT_EQ(parsed.edges[0].kind, EdgeKind::CPS);
  EXPECT_EQ(parsed.test_node, "Q");
}

TEST(SpecText, ErrorsNameTheLine) {
  try {
    parse_spec("node A CNN learner\nedge A B XYZ\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_spec("node A GPU learner\n"), ConfigError);
  EXPECT_THROW(parse_spec("bogus = 1\n"), ConfigError);
}

TEST(Instantiate, WTermStructure) {
  Assembly<double> a(preset("W"), toy_backbones(), 1);
  EXPECT_EQ(a.count(TermKind::Sup), 2u);
  EXPECT_EQ(a.count(TermKind::Semi, LambdaGroup::Learner), 2u);
  EXPECT_EQ(a.count(TermKind::Semi, LambdaGroup::Teacher), 2u);
  EXPECT_EQ(a.test_handle().id, "C");
  EXPECT_EQ(a.test_handle().ema_source, "B");
  EXPECT_FALSE(a.test_handle().net->params().trainable());
}

TEST(Instantiate, PairAndSupervised) {
  Assembly<double> cps(preset("CNN-CNN-CPS/A"), toy_backbones(), 1);
  EXPECT_EQ(cps.count(TermKind::Sup), 2u);
  EXPECT_EQ(cps.count(TermKind::Semi, LambdaGroup::Learner), 2u);
  EXPECT_EQ(cps.count(TermKind::Semi, LambdaGroup::Teacher), 0u);
  Assembly<double> sup(preset("SUP-CNN"), toy_backbones(), 1);
  EXPECT_EQ(sup.terms().size(), 1u);
  EXPECT_EQ(sup.terms()[0].kind, TermKind::Sup);
}

TEST(Instantiate, RejectsInvalidSpec) {
  FrameworkSpec s{"bad", {{"T", Arch::ViT, Role::Teacher}}, {}, "T"};
  EXPECT_THROW(Assembly<double>(s, toy_backbones(), 1), ConfigError);
}

TEST(Instantiate, ObjectiveMatchesWeightedBreakdown) {
  Rng rng(2);
  Assembly<double> a(preset("W"), toy_backbones(), 3);
  const auto batch = toy_batch(rng, 2, 2);
  const auto preds = a.forward(batch, PerturbConfig{}, 4);
  LossBreakdown b;
  const auto loss = a.objective(preds, batch, 0.3, 0.7, &b);
  EXPECT_EQ(b.sup.size(), 2u);
  EXPECT_EQ(b.semi_learner.size(), 2u);
  EXPECT_EQ(b.semi_teacher.size(), 2u);
  EXPECT_NEAR(loss.value()[0], b.total, 1e-12);
  const double expect = b.sup[0] + b.sup[1] + 0.3 * (b.semi_learner[0] + b.semi_learner[1]) +
                        0.7 * (b.semi_teacher[0] + b.semi_teacher[1]);
  EXPECT_NEAR(b.total, expect, 1e-12);
}

TEST(Instantiate, FullyLabeledBatchHasZeroSemiTerms) {
  Rng rng(3);
  Assembly<double> a(preset("W"), toy_backbones(), 3);
  const auto batch = toy_batch(rng, 2, 0);
  const auto preds = a.forward(batch, PerturbConfig{}, 4);
  LossBreakdown b;
  const auto loss = a.objective(preds, batch, 1.0, 1.0, &b);
  for (double v : b.semi()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(loss.value()[0], b.sup[0] + b.sup[1], 1e-12);
}

TEST(Instantiate, SemiTermsNeverReachSourceOrTeacher) {
  Rng rng(4);
  Assembly<double> a(preset("W"), toy_backbones(), 5);
  const auto batch = toy_batch(rng, 2, 2);
  for (std::size_t i = 0; i < a.terms().size(); ++i) {
    const auto& t = a.terms()[i];
    if (t.kind != TermKind::Semi) continue;
    for (auto& h : a.handles()) h.net->params().zero_grad();
    const auto preds = a.forward(batch, PerturbConfig{}, 6);
    backward(*a.term_loss(i, preds, batch));
    auto& hs = a.handles();
    EXPECT_EQ(grad_mass(hs[t.source]), 0.0) << "term " << i;
    EXPECT_EQ(grad_mass(hs[a.test_index()]), 0.0) << "term " << i;
    EXPECT_GT(grad_mass(hs[t.target]), 0.0) << "term " << i;
  }
}

TEST(Instantiate, EmaStepMovesTeacherTowardSource) {
  Assembly<double> a(preset("ViT-MT/C"), toy_backbones(), 7);
  auto& teacher = a.handles()[1];
  auto& student = a.handles()[0];
  a.ema_step();  // first step copies
  for (const auto& n : teacher.net->params().param_names())
    EXPECT_EQ(teacher.net->params().param(n).value(), student.net->params().param(n).value()) << n;
  EXPECT_EQ(a.ema_states()[0].step, 1);
}
