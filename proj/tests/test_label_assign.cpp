#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "sprnet/label_assign.hpp"

namespace sprnet {
namespace {

TEST(Anchors, CountPerLevel) {
  const auto lv = generate_anchors(4, 4, 8, {8, 10, 12}, {0.5, 1, 2});
  EXPECT_EQ(lv.anchors.size(), 144u);
  EXPECT_EQ(lv.per_pixel, 9);
}

TEST(Anchors, CentreAndSize) {
  const auto lv = generate_anchors(2, 2, 8, {16}, {1.0});
  const Box& b = lv.at(0, 0, 0);
  EXPECT_DOUBLE_EQ(b.cx(), 4.0);
  EXPECT_DOUBLE_EQ(b.cy(), 4.0);
  EXPECT_DOUBLE_EQ(b.width(), 16.0);
  EXPECT_DOUBLE_EQ(b.height(), 16.0);
}

TEST(Anchors, RatioPreservesArea) {
  const auto lv = generate_anchors(1, 1, 8, {16}, {2.0});
  const Box& b = lv.at(0, 0, 0);
  EXPECT_NEAR(b.width() / b.height(), 2.0, 1e-12);
  EXPECT_NEAR(b.area(), 256.0, 1e-9);
}

TEST(Anchors, GridIndexRoundTrip) {
  const auto grid = make_anchor_grid({{8, 8, 4}, {4, 4, 8}, {2, 2, 16}}, AnchorConfig{});
  EXPECT_EQ(grid.size(), (64u + 16u + 4u) * 9u);
  for (std::size_t i = 0; i < grid.size(); i += 7) {
    const auto loc = grid.locate(i);
    EXPECT_EQ(grid.index_of(loc), i);
    EXPECT_EQ(grid[i], grid.levels[loc.level].at(loc.y, loc.x, loc.anchor));
  }
}

TEST(BoxIou, Examples) {
  const Box a{0, 0, 10, 10};
  EXPECT_DOUBLE_EQ(box_iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(box_iou(a, Box{20, 20, 30, 30}), 0.0);
  EXPECT_NEAR(box_iou(a, Box{5, 5, 15, 15}), 25.0 / 175.0, 1e-12);
  EXPECT_DOUBLE_EQ(box_iou(Box{5, 5, 15, 15}, a), box_iou(a, Box{5, 5, 15, 15}));
}

TEST(Deltas, IdentityInverseAndLogScale) {
  const Box a{10, 20, 30, 60};
  const auto zero = encode_deltas(a, a);
  for (double v : zero) EXPECT_DOUBLE_EQ(v, 0.0);
  const Box g{3.5, 17.25, 41, 70.5};
  const Box back = decode_deltas(a, encode_deltas(a, g));
  EXPECT_NEAR(back.x1, g.x1, 1e-9);
  EXPECT_NEAR(back.y1, g.y1, 1e-9);
  EXPECT_NEAR(back.x2, g.x2, 1e-9);
  EXPECT_NEAR(back.y2, g.y2, 1e-9);
  const auto d = encode_deltas(Box{0, 0, 10, 10}, Box{-5, 0, 15, 10});
  EXPECT_NEAR(d[2], std::log(2.0), 1e-12);
  EXPECT_NEAR(d[2], 0.6931, 1e-4);
}

TEST(Deltas, ClampFlagsOutOfImage) {
  const auto r = clamp_box(Box{-4, 2, 30, 70}, 32, 64);
  EXPECT_TRUE(r.clamped);
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(r.box, (Box{0, 2, 30, 64}));
  EXPECT_TRUE(clamp_box(Box{40, 40, 50, 50}, 32, 32).degenerate);
}

TEST(AssignBoxLabels, NoGtAllNegative) {
  const auto grid = make_anchor_grid({{4, 4, 4}, {2, 2, 8}, {1, 1, 16}}, AnchorConfig{});
  const auto labels = assign_box_labels(grid, {});
  EXPECT_EQ(labels.negatives, grid.size());
  EXPECT_EQ(labels.positives, 0u);
}

TEST(AssignBoxLabels, AnchorEqualToGtIsPositive) {
  const auto grid = make_anchor_grid({{4, 4, 4}, {2, 2, 8}, {1, 1, 16}}, AnchorConfig{});
  const Box gt = grid[37];
  const auto labels = assign_box_labels(grid, {gt});
  EXPECT_EQ(labels.assignment[37], 0);
  EXPECT_DOUBLE_EQ(labels.max_iou[37], 1.0);
}

TEST(AssignBoxLabels, TwentyAnchorsThreeGtsMatchOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(0, 20), ext(2, 12);
  for (int trial = 0; trial < 50; ++trial) {
    AnchorGrid grid;
    AnchorLevel lv;
    lv.height = 1;
    lv.width = 20;
    lv.stride = 1;
    lv.per_pixel = 1;
    for (int i = 0; i < 20; ++i) {
      const double x = pos(rng), y = pos(rng);
      lv.anchors.push_back({x, y, x + ext(rng), y + ext(rng)});
    }
    grid.levels.push_back(lv);
    std::vector<Box> gts;
    for (int g = 0; g < 3; ++g) {
      // reuse an anchor now and then so exact ties and IoU 1 occur
      if (g == 0 && trial % 3 == 0) {
        gts.push_back(lv.anchors[static_cast<std::size_t>(trial % 20)]);
        continue;
      }
      const double x = pos(rng), y = pos(rng);
      gts.push_back({x, y, x + ext(rng), y + ext(rng)});
    }
    if (trial % 5 == 0) gts.push_back(gts[0]);  // duplicate gt: ties go to the lower index
    const auto got = assign_box_labels(grid, gts);
    const auto want = oracle::box_labels(grid, gts);
    EXPECT_EQ(got.assignment, want.assignment);
    EXPECT_EQ(got.max_iou, want.max_iou);
    EXPECT_TRUE(oracle::same_labels(got, want));
    EXPECT_EQ(got.positives + got.negatives + got.ignored, grid.size());
  }
}

BinaryMask rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
  BinaryMask m(w, h);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(x, y) = 1;
  return m;
}

TEST(MaskTarget, FullBoxAllOnes) {
  const auto m = rect_mask(100, 100, 10, 20, 74, 84);
  const auto grid = make_mask_target(m, Box{10, 20, 74, 84});
  for (auto v : grid) EXPECT_EQ(v, 1);
}

TEST(MaskTarget, LeftHalfStep) {
  // box width 64 is divisible by 32
  const auto m = rect_mask(100, 100, 10, 20, 42, 84);
  const auto grid = make_mask_target(m, Box{10, 20, 74, 84});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) EXPECT_EQ(grid[y * 32 + x], x < 16 ? 1 : 0) << x << "," << y;
}

TEST(MaskTarget, EmptyMaskAllZeros) {
  const BinaryMask m(50, 50);
  const auto grid = make_mask_target(m, Box{5, 5, 45, 45});
  for (auto v : grid) EXPECT_EQ(v, 0);
}

TEST(MaskTarget, BoxOffCanvasRejected) {
  const BinaryMask m(50, 50);
  EXPECT_THROW(make_mask_target(m, Box{60, 60, 70, 70}), Error);
}

TEST(PositivePixels, NothingAboveThreshold) {
  const auto grid = make_anchor_grid({{4, 4, 4}, {2, 2, 8}, {1, 1, 16}}, AnchorConfig{});
  InstanceAnnotation a{0, Box{0, 0, 2, 2}, rect_mask(16, 16, 0, 0, 2, 2)};
  EXPECT_TRUE(select_positive_pixels(grid, {a}).entries.empty());
}

TEST(PositivePixels, SameGtSameTarget) {
  const auto grid = make_anchor_grid({{16, 16, 4}, {8, 8, 8}, {4, 4, 16}}, AnchorConfig{});
  InstanceAnnotation a{1, Box{8, 8, 40, 40}, rect_mask(64, 64, 8, 8, 40, 40)};
  for (int y = 8; y < 40; ++y) a.mask.at(8 + (y - 8) / 2, y) = 0;  // not a plain rectangle
  const auto set = select_positive_pixels(grid, {a}, MaskSampleConfig{0.5, 300});
  ASSERT_GE(set.entries.size(), 2u);
  for (const auto& e : set.entries) EXPECT_EQ(e.grid, set.entries.front().grid);
}

TEST(PositivePixels, CapAndOrdering) {
  const auto grid = make_anchor_grid({{16, 16, 4}, {8, 8, 8}, {4, 4, 16}}, AnchorConfig{});
  std::vector<InstanceAnnotation> gts;
  for (int i = 0; i < 4; ++i) {
    const int x = 4 + 14 * i;
    gts.push_back({0, Box{double(x), 10, double(x + 12), 50}, rect_mask(64, 64, x, 10, x + 12, 50)});
  }
  const auto all = select_positive_pixels(grid, gts, MaskSampleConfig{0.3, 300});
  ASSERT_GT(all.entries.size(), 5u);
  const auto capped = select_positive_pixels(grid, gts, MaskSampleConfig{0.3, 5});
  ASSERT_EQ(capped.entries.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(capped.entries[i].pixel, all.entries[i].pixel);
  for (std::size_t i = 1; i < all.entries.size(); ++i) EXPECT_GE(all.entries[i - 1].iou, all.entries[i].iou);
}

TEST(PositivePixels, ThresholdMustBeInUnitInterval) {
  const auto grid = make_anchor_grid({{4, 4, 4}, {2, 2, 8}, {1, 1, 16}}, AnchorConfig{});
  EXPECT_THROW(select_positive_pixels(grid, {}, MaskSampleConfig{1.0, 300}), Error);
}

TEST(MaskTarget, MatchesIntegerResize) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 40; ++t) {
    for (const auto& a : oracle::random_scene(rng, 96, 4)) {
      EXPECT_EQ(make_mask_target(a.mask, a.box), oracle::mask_target(a.mask, a.box));
    }
  }
}

TEST(RandomScenes, AllThreeMatchBruteForce) {
  const auto grid = make_anchor_grid({{32, 32, 4}, {16, 16, 8}, {8, 8, 16}}, AnchorConfig{});
  std::mt19937_64 rng(13);
  for (int t = 0; t < 30; ++t) {
    const auto scene = oracle::random_scene(rng, 128, 5);
    std::vector<Box> boxes;
    for (const auto& a : scene) boxes.push_back(a.box);
    EXPECT_TRUE(oracle::same_labels(assign_box_labels(grid, boxes), oracle::box_labels(grid, boxes)));
    for (std::size_t cap : {std::size_t{300}, std::size_t{7}}) {
      const auto got = select_positive_pixels(grid, scene, MaskSampleConfig{0.7, cap}).entries;
      EXPECT_TRUE(oracle::same_targets(got, oracle::positive_pixels(grid, scene, 0.7, cap))) << t;
    }
  }
}

}  // namespace
}  // namespace sprnet
