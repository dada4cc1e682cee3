// Axis-aligned boxes, IoU, and the (tx, ty, tw, th) delta parameterization.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "sprnet/tensor.hpp"

namespace sprnet {

/// Rectangle [x1, x2) x [y1, y2) in image pixel coordinates.
struct Box {
  double x1 = 0;
  double y1 = 0;
  double x2 = 0;
  double y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x2 > x1 && y2 > y1;
  }

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double box_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

using Deltas = std::array<double, 4>;

inline Deltas encode_deltas(const Box& anchor, const Box& gt) {
  if (!anchor.valid() || !gt.valid()) throw Error("encode_deltas: boxes must have positive area");
  return {(gt.cx() - anchor.cx()) / anchor.width(), (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

/// Upper bound on tw/th during decoding, so exp() cannot overflow.
inline constexpr double kMaxLogScale = 4.135166556742356;  // ln(1000 / 16)

inline Box decode_deltas(const Box& anchor, const Deltas& d) {
  const double tw = std::min(d[2], kMaxLogScale);
  const double th = std::min(d[3], kMaxLogScale);
  return Box::from_center(anchor.cx() + d[0] * anchor.width(), anchor.cy() + d[1] * anchor.height(),
                          anchor.width() * std::exp(tw), anchor.height() * std::exp(th));
}

struct ClampResult {
  Box box;
  bool clamped = false;
  bool degenerate = false;  // non-positive extent after clamping
};

inline ClampResult clamp_box(const Box& b, int image_w, int image_h) {
  ClampResult r;
  r.box = {std::clamp(b.x1, 0.0, double(image_w)), std::clamp(b.y1, 0.0, double(image_h)),
           std::clamp(b.x2, 0.0, double(image_w)), std::clamp(b.y2, 0.0, double(image_h))};
  r.clamped = !(r.box == b);
  r.degenerate = !(r.box.x2 > r.box.x1 && r.box.y2 > r.box.y1);
  return r;
}

}  // namespace sprnet
