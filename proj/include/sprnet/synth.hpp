// Synthetic scenes: anti-aliased discs, rectangles and triangles (classes 0,
// 1, 2) on a noisy flat background, with exact per-instance masks.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sprnet/image_io.hpp"
#include "sprnet/label_assign.hpp"
#include "sprnet/log.hpp"

namespace sprnet {

enum ShapeClass : int { kDisc = 0, kRectangle = 1, kTriangle = 2 };
inline constexpr int kShapeClasses = 3;

inline const char* shape_name(int c) {
  switch (c) {
    case kDisc: return "disc";
    case kRectangle: return "rectangle";
    case kTriangle: return "triangle";
  }
  return "unknown";
}

struct SceneSpec {
  std::uint64_t seed = 7;
  int image_size = 128;
  int min_instances = 1;
  int max_instances = 3;
  double min_size = 16;  // outer extent of a shape, px
  double max_size = 44;
  double max_overlap = 0.0;  // largest box IoU allowed between two instances
  int placement_retries = 100;
  double noise_sigma = 8.0;
  int supersample = 4;  // per axis
};

struct Scene {
  Image image;
  std::vector<InstanceAnnotation> instances;
};

namespace detail {

struct ShapeGeom {
  int kind = kDisc;
  double cx = 0, cy = 0;
  double w = 0, h = 0;   // extent
  int orientation = 0;   // triangles: apex up, down, left, right

  Box bounds() const { return Box::from_center(cx, cy, w, h); }

  bool inside(double x, double y) const {
    const double u = (x - cx) / (0.5 * w);
    const double v = (y - cy) / (0.5 * h);
    switch (kind) {
      case kDisc: return u * u + v * v <= 1.0;
      case kRectangle: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
      default: {
        // apex at t = -1 along the main axis, base at t = +1
        double t = 0, s = 0;
        switch (orientation) {
          case 0: t = v, s = u; break;
          case 1: t = -v, s = u; break;
          case 2: t = u, s = v; break;
          default: t = -u, s = v; break;
        }
        if (t < -1.0 || t > 1.0) return false;
        return std::abs(s) <= 0.5 * (t + 1.0);
      }
    }
  }
};

}  // namespace detail

/// Deterministic in (spec, index).
inline Scene synth_scene(const SceneSpec& spec, std::uint64_t index) {
  if (spec.min_instances < 0 || spec.max_instances < spec.min_instances) throw Error("SceneSpec: bad instance range");
  if (!(spec.min_size > 1 && spec.max_size >= spec.min_size && spec.max_size < spec.image_size - 2)) {
    throw Error("SceneSpec: bad size range");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const int n = spec.image_size;
  std::array<double, 3> bg{};
  for (auto& c : bg) c = uniform(40, 215);

  const int wanted = pick(spec.min_instances, spec.max_instances);
  std::vector<detail::ShapeGeom> shapes;
  for (int i = 0; i < wanted; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.placement_retries && !placed; ++attempt) {
      detail::ShapeGeom g;
      g.kind = pick(0, kShapeClasses - 1);
      const double s = uniform(spec.min_size, spec.max_size);
      switch (g.kind) {
        case kDisc: g.w = g.h = s; break;
        case kRectangle: {
          const double aspect = uniform(0.5, 1.0);
          if (pick(0, 1)) g.w = s, g.h = s * aspect;
          else g.h = s, g.w = s * aspect;
          break;
        }
        default: {
          g.orientation = pick(0, 3);
          const double depth = s * uniform(0.8, 1.0);
          if (g.orientation < 2) g.w = s, g.h = depth;
          else g.h = s, g.w = depth;
        }
      }
      g.cx = uniform(0.5 * g.w + 1, n - 0.5 * g.w - 1);
      g.cy = uniform(0.5 * g.h + 1, n - 0.5 * g.h - 1);
      const Box b = g.bounds();
      placed = std::all_of(shapes.begin(), shapes.end(), [&](const detail::ShapeGeom& o) {
        const double iou = box_iou(b, o.bounds());
        return spec.max_overlap > 0 ? iou <= spec.max_overlap : iou == 0.0;
      });
      if (placed) shapes.push_back(g);
    }
    if (!placed) {
      log_warning("synth_scene: index " + std::to_string(index) + " placed " + std::to_string(shapes.size()) +
                  " of " + std::to_string(wanted) + " instances");
      break;
    }
  }

  std::vector<std::array<double, 3>> colors;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    std::array<double, 3> c{};
    do {
      for (auto& v : c) v = uniform(0, 255);
    } while (std::abs(c[0] - bg[0]) + std::abs(c[1] - bg[1]) + std::abs(c[2] - bg[2]) < 150);
    colors.push_back(c);
  }

  // Composite back to front; coverage from a regular supersampling grid.
  std::vector<std::array<double, 3>> canvas(static_cast<std::size_t>(n) * n, bg);
  std::vector<BinaryMask> masks(shapes.size(), BinaryMask(n, n));
  const int ss = spec.supersample;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const Box b = shapes[i].bounds();
    const int x0 = std::max(0, int(std::floor(b.x1))), x1 = std::min(n, int(std::ceil(b.x2)));
    const int y0 = std::max(0, int(std::floor(b.y1))), y1 = std::min(n, int(std::ceil(b.y2)));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx) hits += shapes[i].inside(x + (sx + 0.5) / ss, y + (sy + 0.5) / ss);
        if (hits == 0) continue;
        const double cov = double(hits) / (ss * ss);
        auto& px = canvas[static_cast<std::size_t>(y) * n + x];
        for (int c = 0; c < 3; ++c) px[c] = px[c] * (1 - cov) + colors[i][c] * cov;
        if (2 * hits >= ss * ss) {
          masks[i].at(x, y) = 1;
          for (std::size_t j = 0; j < i; ++j) masks[j].at(x, y) = 0;  // occluded
        }
      }
    }
  }

  Scene scene;
  scene.image = Image(n, n, 3);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = canvas[static_cast<std::size_t>(y) * n + x][c] + noise(rng);
        scene.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto box = masks[i].tight_box();
    if (!box) continue;
    scene.instances.push_back({shapes[i].kind, *box, std::move(masks[i])});
  }
  return scene;
}

}  // namespace sprnet
