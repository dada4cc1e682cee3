// Dense anchors and training-target preparation: box labels for the
// classification/regression heads and positive pixels with their 32x32
// mask targets for the mask branch.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sprnet/box.hpp"
#include "sprnet/mask.hpp"
#include "sprnet/ops.hpp"

namespace sprnet {

inline constexpr int kMaskSize = 32;
using MaskGrid = std::array<std::uint8_t, kMaskSize * kMaskSize>;

struct InstanceAnnotation {
  int class_id = 0;
  Box box;
  BinaryMask mask;
};

/// Anchors of one pyramid level, ordered (y, x, a).
struct AnchorLevel {
  int height = 0;
  int width = 0;
  int stride = 0;
  int per_pixel = 0;
  std::size_t offset = 0;  // index of this level's first anchor in the whole grid
  std::vector<Box> anchors;

  const Box& at(int y, int x, int a) const {
    return anchors[(static_cast<std::size_t>(y) * width + x) * per_pixel + a];
  }
};

struct AnchorLocation {
  int level = 0;
  int y = 0;
  int x = 0;
  int anchor = 0;
};

struct AnchorGrid {
  std::vector<AnchorLevel> levels;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.anchors.size();
    return n;
  }
  int per_pixel() const { return levels.empty() ? 0 : levels.front().per_pixel; }

  const Box& operator[](std::size_t i) const {
    const auto& lv = levels[locate(i).level];
    return lv.anchors[i - lv.offset];
  }

  AnchorLocation locate(std::size_t i) const {
    for (int l = static_cast<int>(levels.size()) - 1; l >= 0; --l) {
      const auto& lv = levels[l];
      if (i >= lv.offset) {
        const std::size_t local = i - lv.offset;
        const int a = static_cast<int>(local % lv.per_pixel);
        const std::size_t pix = local / lv.per_pixel;
        return {l, static_cast<int>(pix / lv.width), static_cast<int>(pix % lv.width), a};
      }
    }
    throw Error("AnchorGrid: index out of range");
  }

  std::size_t index_of(const AnchorLocation& loc) const {
    const auto& lv = levels[loc.level];
    return lv.offset + (static_cast<std::size_t>(loc.y) * lv.width + loc.x) * lv.per_pixel + loc.anchor;
  }
};

/// Anchors of size s and aspect ratio r have (w, h) = (s sqrt(r), s / sqrt(r)),
/// centred on ((x + 0.5) stride, (y + 0.5) stride). Anchor index a = size_index * |ratios| + ratio_index.
inline AnchorLevel generate_anchors(int height, int width, int stride,
                                    const std::vector<double>& sizes,
                                    const std::vector<double>& ratios) {
  if (sizes.empty() || ratios.empty()) throw Error("generate_anchors: sizes and ratios must be non-empty");
  AnchorLevel lv;
  lv.height = height;
  lv.width = width;
  lv.stride = stride;
  lv.per_pixel = static_cast<int>(sizes.size() * ratios.size());
  lv.anchors.reserve(static_cast<std::size_t>(height) * width * lv.per_pixel);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double cx = (x + 0.5) * stride;
      const double cy = (y + 0.5) * stride;
      for (double s : sizes) {
        for (double r : ratios) {
          const double sr = std::sqrt(r);
          lv.anchors.push_back(Box::from_center(cx, cy, s * sr, s / sr));
        }
      }
    }
  }
  return lv;
}

struct AnchorConfig {
  std::vector<double> base_sizes{16, 32, 64};  // one per level, 4x its stride
  std::vector<double> scales{1.0, std::pow(2.0, 1.0 / 3.0), std::pow(2.0, 2.0 / 3.0)};
  std::vector<double> ratios{0.5, 1.0, 2.0};

  int per_pixel() const { return static_cast<int>(scales.size() * ratios.size()); }
};

struct LevelDims {
  int height;
  int width;
  int stride;
};

inline AnchorGrid make_anchor_grid(const std::vector<LevelDims>& dims, const AnchorConfig& cfg) {
  if (dims.size() != cfg.base_sizes.size()) {
    throw Error("make_anchor_grid: " + std::to_string(dims.size()) + " levels but " +
                std::to_string(cfg.base_sizes.size()) + " base sizes");
  }
  AnchorGrid grid;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    std::vector<double> sizes;
    for (double s : cfg.scales) sizes.push_back(cfg.base_sizes[l] * s);
    auto lv = generate_anchors(dims[l].height, dims[l].width, dims[l].stride, sizes, cfg.ratios);
    lv.offset = offset;
    offset += lv.anchors.size();
    grid.levels.push_back(std::move(lv));
  }
  return grid;
}

inline constexpr int kNegative = -1;
inline constexpr int kIgnore = -2;

struct BoxLabels {
  std::vector<int> assignment;  // gt index for positives, kNegative or kIgnore
  std::vector<double> max_iou;
  std::vector<Deltas> targets;  // meaningful for positives only
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t ignored = 0;
};

struct BoxLabelConfig {
  double positive_iou = 0.5;
  double negative_iou = 0.4;
};

/// Positive iff max IoU > positive_iou, negative iff max IoU < negative_iou,
/// otherwise ignored. Positives bind to their argmax gt (lowest index on ties).
inline BoxLabels assign_box_labels(const AnchorGrid& grid, const std::vector<Box>& gts,
                                   const BoxLabelConfig& cfg = {}) {
  BoxLabels out;
  const std::size_t n = grid.size();
  out.assignment.assign(n, kNegative);
  out.max_iou.assign(n, 0.0);
  out.targets.assign(n, Deltas{0, 0, 0, 0});
  for (const auto& lv : grid.levels) {
    for (std::size_t local = 0; local < lv.anchors.size(); ++local) {
      const std::size_t i = lv.offset + local;
      const Box& a = lv.anchors[local];
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const double iou = box_iou(a, gts[g]);
        if (best < 0 || iou > best_iou) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      out.max_iou[i] = best_iou;
      if (best >= 0 && best_iou > cfg.positive_iou) {
        out.assignment[i] = best;
        out.targets[i] = encode_deltas(a, gts[best]);
        ++out.positives;
      } else if (best_iou < cfg.negative_iou) {
        out.assignment[i] = kNegative;
        ++out.negatives;
      } else {
        out.assignment[i] = kIgnore;
        ++out.ignored;
      }
    }
  }
  return out;
}

/// Crops the mask to the box, resizes it to 32x32 with half-pixel bilinear
/// sampling, and binarizes at 0.5.
inline MaskGrid make_mask_target(const BinaryMask& mask, const Box& box) {
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  const int x1 = std::min(mask.width, static_cast<int>(std::ceil(box.x2)));
  const int y1 = std::min(mask.height, static_cast<int>(std::ceil(box.y2)));
  if (x1 <= x0 || y1 <= y0) throw Error("make_mask_target: box does not overlap the mask canvas");
  const int cw = x1 - x0;
  const int ch = y1 - y0;
  const auto ty = detail::bilinear_taps(ch, kMaskSize);
  const auto tx = detail::bilinear_taps(cw, kMaskSize);
  MaskGrid grid{};
  for (int y = 0; y < kMaskSize; ++y) {
    for (int x = 0; x < kMaskSize; ++x) {
      auto px = [&](int yy, int xx) { return double(mask.at(x0 + xx, y0 + yy)); };
      const double fy = ty[y].frac;
      const double fx = tx[x].frac;
      const double top = px(ty[y].i0, tx[x].i0) * (1 - fx) + px(ty[y].i0, tx[x].i1) * fx;
      const double bot = px(ty[y].i1, tx[x].i0) * (1 - fx) + px(ty[y].i1, tx[x].i1) * fx;
      grid[y * kMaskSize + x] = (top * (1 - fy) + bot * fy) >= 0.5 ? 1 : 0;
    }
  }
  return grid;
}

struct PixelRef {
  int level = 0;
  int y = 0;
  int x = 0;
  int batch = 0;

  friend bool operator==(const PixelRef&, const PixelRef&) = default;
};

struct MaskTarget {
  PixelRef pixel;
  int gt = 0;
  int anchor = 0;  // index within the pixel's anchors
  double iou = 0.0;
  MaskGrid grid{};
};

struct MaskTargetSet {
  std::vector<MaskTarget> entries;
};

struct MaskSampleConfig {
  double iou_thresh = 0.7;
  std::size_t cap = 300;
};

/// A pixel qualifies when any of its anchors has IoU > iou_thresh with any
/// gt; it is bound to the gt of its best anchor. Entries are ordered by that
/// IoU, descending (scan order on ties), and truncated at cap.
inline MaskTargetSet select_positive_pixels(const AnchorGrid& grid,
                                            const std::vector<InstanceAnnotation>& gts,
                                            const MaskSampleConfig& cfg = {}, int batch = 0) {
  if (!(cfg.iou_thresh > 0.0 && cfg.iou_thresh < 1.0)) {
    throw Error("select_positive_pixels: iou_thresh must lie in (0, 1)");
  }
  MaskTargetSet out;
  if (gts.empty()) return out;
  std::vector<MaskGrid> gt_grids;
  gt_grids.reserve(gts.size());
  for (const auto& g : gts) gt_grids.push_back(make_mask_target(g.mask, g.box));
  for (int l = 0; l < static_cast<int>(grid.levels.size()); ++l) {
    const auto& lv = grid.levels[l];
    for (int y = 0; y < lv.height; ++y) {
      for (int x = 0; x < lv.width; ++x) {
        int best_gt = -1;
        int best_anchor = -1;
        double best_iou = 0.0;
        for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
          for (int a = 0; a < lv.per_pixel; ++a) {
            const double iou = box_iou(lv.at(y, x, a), gts[g].box);
            if (iou > best_iou) {
              best_iou = iou;
              best_gt = g;
              best_anchor = a;
            }
          }
        }
        if (best_gt >= 0 && best_iou > cfg.iou_thresh) {
          out.entries.push_back({PixelRef{l, y, x, batch}, best_gt, best_anchor, best_iou, gt_grids[best_gt]});
        }
      }
    }
  }
  std::stable_sort(out.entries.begin(), out.entries.end(),
                   [](const MaskTarget& a, const MaskTarget& b) { return a.iou > b.iou; });
  if (out.entries.size() > cfg.cap) out.entries.resize(cfg.cap);
  return out;
}

}  // namespace sprnet
