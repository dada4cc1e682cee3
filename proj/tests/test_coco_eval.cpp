#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "oracles.hpp"
#include "sprnet/coco_eval.hpp"

namespace sprnet {
namespace {

BinaryMask rect(int s, const Box& b) {
  BinaryMask m(s, s);
  for (int y = int(b.y1); y < int(b.y2); ++y)
    for (int x = int(b.x1); x < int(b.x2); ++x) m.at(x, y) = 1;
  return m;
}

EvalGt gt(std::int64_t img, int cls, const Box& b, int s = 64) { return {img, cls, b, rect(s, b)}; }
EvalDet det(std::int64_t img, int cls, double score, const Box& b, int s = 64) { return {img, cls, score, b, rect(s, b)}; }

TEST(MaskIou, HalfOverlapAndDegenerate) {
  const auto a = rect(8, Box{0, 0, 4, 4});
  const auto b = rect(8, Box{0, 0, 4, 8});
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 0.5);
  bool degenerate = false;
  EXPECT_EQ(mask_iou(BinaryMask(8, 8), BinaryMask(8, 8), &degenerate), 0.0);
  EXPECT_TRUE(degenerate);
  EXPECT_THROW(mask_iou(BinaryMask(8, 8), BinaryMask(8, 9)), Error);
}

TEST(Summarize, PerfectSetIsOne) {
  std::vector<EvalGt> g{gt(1, 0, {2, 2, 20, 30}), gt(1, 1, {30, 30, 60, 50}), gt(2, 0, {5, 5, 15, 15})};
  std::vector<EvalDet> d;
  for (const auto& x : g) d.push_back({x.image_id, x.class_id, 0.9, x.box, x.mask});
  const auto r = summarize(g, d);
  EXPECT_DOUBLE_EQ(r.box.ap, 1.0);
  EXPECT_DOUBLE_EQ(r.mask.ap, 1.0);
  EXPECT_DOUBLE_EQ(r.box.ar100, 1.0);
  EXPECT_EQ(r.box.ap_l, -1.0);  // nothing large
}

TEST(Summarize, FalsePositiveAboveTruePositiveIsHalf) {
  const std::vector<EvalGt> g{gt(1, 0, {10, 10, 30, 30})};
  const std::vector<EvalDet> d{det(1, 0, 0.9, {40, 40, 60, 60}), det(1, 0, 0.8, {10, 10, 30, 30})};
  const auto r = summarize(g, d);
  EXPECT_DOUBLE_EQ(r.box.ap50, 0.5);
  EXPECT_DOUBLE_EQ(r.mask.ap50, 0.5);
}

TEST(Summarize, NoDetectionsIsZero) {
  const auto r = summarize({gt(1, 0, {10, 10, 30, 30})}, {});
  EXPECT_EQ(r.box.ap, 0.0);
  EXPECT_EQ(r.mask.ar100, 0.0);
}

TEST(Summarize, BoxEqualsMaskForFilledRectangles) {
  const auto f = oracle::eval_fixture(3, 8);
  std::vector<EvalGt> g;
  std::vector<EvalDet> d;
  for (const auto& x : f.gts) g.push_back({x.image_id, x.class_id, x.box, rect(160, x.box)});
  for (const auto& x : f.dets) {
    const Box b = clamp_box(x.box, 160, 160).box;
    d.push_back({x.image_id, x.class_id, x.score, b, rect(160, b)});
  }
  const auto r = summarize(g, d);
  EXPECT_NEAR(r.box.ap, r.mask.ap, 1e-12);
  EXPECT_NEAR(r.box.ar100, r.mask.ar100, 1e-12);
}

TEST(Summarize, MatchesNaiveEvaluatorOnFixture) {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto f = oracle::eval_fixture(seed, 20);
    const auto r = summarize(f.gts, f.dets);
    EXPECT_LT(oracle::max_abs_diff(r.box, oracle::naive_metrics(f.gts, f.dets, false)), 1e-9);
    EXPECT_LT(oracle::max_abs_diff(r.mask, oracle::naive_metrics(f.gts, f.dets, true)), 1e-9);
    EXPECT_GT(r.box.ap, 0.05);
    EXPECT_LT(r.box.ap, 0.95);
  }
}

TEST(Summarize, RecallGrowsWithDetectionCap) {
  const auto r = summarize(oracle::eval_fixture(4).gts, oracle::eval_fixture(4).dets);
  for (const auto* m : {&r.box, &r.mask}) {
    EXPECT_LE(m->ar1, m->ar10);
    EXPECT_LE(m->ar10, m->ar100);
  }
}

TEST(Summarize, DroppingLowestFalsePositiveNeverHurts) {
  auto f = oracle::eval_fixture(5, 10);
  const auto base = summarize(f.gts, f.dets);
  // find the lowest scoring detection that overlaps no gt of its class
  int victim = -1;
  for (std::size_t i = 0; i < f.dets.size(); ++i) {
    bool touches = false;
    for (const auto& g : f.gts)
      touches |= g.image_id == f.dets[i].image_id && g.class_id == f.dets[i].class_id && box_iou(g.box, f.dets[i].box) > 0;
    if (!touches && (victim < 0 || f.dets[i].score < f.dets[std::size_t(victim)].score)) victim = int(i);
  }
  ASSERT_GE(victim, 0);
  f.dets.erase(f.dets.begin() + victim);
  const auto after = summarize(f.gts, f.dets);
  EXPECT_GE(after.box.ap50 + 1e-12, base.box.ap50);
  EXPECT_GE(after.mask.ap + 1e-12, base.mask.ap);
}

TEST(Match, RandomizedAgainstExhaustive) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 300; ++t) {
    const std::size_t nd = rng() % 6, ng = rng() % 5;
    std::vector<std::vector<double>> ious(nd, std::vector<double>(ng));
    for (auto& row : ious)
      for (auto& v : row) v = std::round(u(rng) * 10) / 10;  // coarse values force ties
    std::vector<bool> gig(ng), dout(nd);
    for (std::size_t g = 0; g < ng; ++g) gig[g] = u(rng) < 0.3;
    for (std::size_t d = 0; d < nd; ++d) dout[d] = u(rng) < 0.3;
    const auto got = match_detections(ious, ng, gig, dout, 0.5);
    std::vector<bool> used(ng, false);
    for (std::size_t d = 0; d < nd; ++d) {
      int pick = -1;
      for (bool want_ig : {false, true}) {
        double best = -1;
        for (std::size_t g = 0; g < ng; ++g)
          if (!used[g] && gig[g] == want_ig && ious[d][g] >= 0.5 && ious[d][g] > best) best = ious[d][g], pick = int(g);
        if (pick >= 0) break;
      }
      ASSERT_EQ(got.det_match[d], pick) << t;
      if (pick >= 0) {
        used[std::size_t(pick)] = true;
        EXPECT_EQ(got.det_ignore[d], gig[std::size_t(pick)]);
      } else {
        EXPECT_EQ(got.det_ignore[d], dout[d]);
      }
    }
  }
}

TEST(AveragePrecision, Examples) {
  EXPECT_DOUBLE_EQ(average_precision({true}, 1), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({false, true}, 1), 0.5);
  EXPECT_EQ(average_precision({}, 0), -1.0);
  EXPECT_EQ(average_precision({}, 3), 0.0);
  // half the gts found at full precision: points 0..50 score 1
  EXPECT_NEAR(average_precision({true}, 2), 51.0 / 101.0, 1e-15);
}

TEST(Output, JsonAndCurveShape) {
  const auto r = summarize({gt(1, 0, {10, 10, 30, 30})}, {det(1, 0, 0.5, {10, 10, 30, 30})});
  const auto text = eval_result_json(r);
  const auto j = nlohmann::json::parse(text);
  EXPECT_NEAR(j["box"]["AP"].get<double>(), 1.0, 1e-12);  // precision carries a 2^-52 guard
  EXPECT_EQ(j["mask"].size(), 12u);
  const auto csv = pr_curve_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 101);
}

}  // namespace
}  // namespace sprnet
