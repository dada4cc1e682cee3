// Inference: global top-k over (pixel, anchor, class) scores, box decoding
// from the scoring anchor, single-pixel mask reconstruction, per-class NMS
// and pasting of the 32x32 masks into their boxes.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "sprnet/image_io.hpp"
#include "sprnet/model.hpp"

namespace sprnet {

struct Candidate {
  PixelRef pixel;
  int anchor = 0;
  int class_id = 0;
  double score = 0;
  std::size_t row = 0;  // anchor row in the whole grid
};

/// scores: row-major [rows, classes] probabilities, rows ordered (level, y, x, anchor).
/// Descending by score; ties keep (level, y, x, anchor, class) order.
inline std::vector<Candidate> top_k_pixels(const AnchorGrid& grid, const std::vector<double>& scores, int classes,
                                           int k) {
  if (k < 1) throw Error("top_k_pixels: k must be >= 1");
  if (classes < 1 || scores.size() != grid.size() * static_cast<std::size_t>(classes)) {
    throw Error("top_k_pixels: score count does not match the anchor grid");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  std::vector<Candidate> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t row = idx[i] / classes;
    const auto loc = grid.locate(row);
    out.push_back({PixelRef{loc.level, loc.y, loc.x, 0}, loc.anchor, static_cast<int>(idx[i] % classes), scores[idx[i]], row});
  }
  return out;
}

struct Detection {
  int class_id = 0;
  double score = 0;
  Box box;
  std::array<float, kMaskSize * kMaskSize> mask32{};  // probabilities
  PixelRef pixel;
  int anchor = 0;
};

/// Greedy per-class suppression of boxes with IoU > iou_thresh against a kept
/// box. Input must be sorted by score; survivors keep their order.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh = 0.5) {
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id == d.class_id && box_iou(k.box, d.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

/// Pixels whose centres fall inside the box take the bilinear (half-pixel)
/// sample of mask32 over the box, binarized at `threshold`.
inline BinaryMask paste_mask(const Detection& det, int width, int height, double threshold = 0.5) {
  BinaryMask out(width, height);
  const Box b = clamp_box(det.box, width, height).box;
  if (!(b.width() > 0 && b.height() > 0)) return out;
  const int px0 = std::max(0, static_cast<int>(std::ceil(b.x1 - 0.5)));
  const int px1 = std::min(width, static_cast<int>(std::ceil(b.x2 - 0.5)));
  const int py0 = std::max(0, static_cast<int>(std::ceil(b.y1 - 0.5)));
  const int py1 = std::min(height, static_cast<int>(std::ceil(b.y2 - 0.5)));
  auto tap = [](double u, int& i0, int& i1, double& f) {
    u = std::clamp(u, 0.0, double(kMaskSize - 1));
    i0 = static_cast<int>(std::floor(u));
    i1 = std::min(i0 + 1, kMaskSize - 1);
    f = u - i0;
  };
  for (int y = py0; y < py1; ++y) {
    int y0, y1;
    double fy;
    tap((y + 0.5 - b.y1) / b.height() * kMaskSize - 0.5, y0, y1, fy);
    for (int x = px0; x < px1; ++x) {
      int x0, x1;
      double fx;
      tap((x + 0.5 - b.x1) / b.width() * kMaskSize - 0.5, x0, x1, fx);
      auto m = [&](int yy, int xx) { return double(det.mask32[yy * kMaskSize + xx]); };
      const double v = (m(y0, x0) * (1 - fx) + m(y0, x1) * fx) * (1 - fy) + (m(y1, x0) * (1 - fx) + m(y1, x1) * fx) * fy;
      if (v >= threshold) out.at(x, y) = 1;
    }
  }
  return out;
}

struct InferenceResult {
  std::vector<Detection> detections;  // after NMS
  std::size_t candidates = 0;         // top-k entries above the score floor
  std::size_t decoder_rows = 0;       // pixel columns pushed through the mask decoder
};

/// Boxes from the scoring anchor's deltas (clamped; area < 1 px^2 dropped),
/// masks from the decoder at each distinct selected pixel.
template <class T>
std::vector<Detection> decode_detections(const SprNet<T>& net, const DenseOutputs<T>& dense,
                                         const std::vector<Candidate>& selected, int width, int height,
                                         DecoderTrace* trace = nullptr) {
  std::vector<Detection> dets;
  auto deltas = dense.box_rows.data();
  for (const auto& c : selected) {
    Deltas d;
    for (int j = 0; j < 4; ++j) d[j] = static_cast<double>(deltas[c.row * 4 + j]);
    const auto clamped = clamp_box(decode_deltas(net.anchors()[c.row], d), width, height);
    if (clamped.degenerate || clamped.box.area() < 1.0) continue;
    Detection det;
    det.class_id = c.class_id;
    det.score = c.score;
    det.box = clamped.box;
    det.pixel = c.pixel;
    det.anchor = c.anchor;
    dets.push_back(det);
  }
  if (dets.empty()) return dets;
  std::vector<PixelRef> pixels;
  std::vector<std::size_t> slot(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto it = std::find(pixels.begin(), pixels.end(), dets[i].pixel);
    slot[i] = static_cast<std::size_t>(it - pixels.begin());
    if (it == pixels.end()) pixels.push_back(dets[i].pixel);
  }
  const auto mf = net.mask_logits(dense.pyramid, pixels, trace);
  std::vector<std::size_t> row_of(pixels.size());
  for (std::size_t r = 0; r < mf.source.size(); ++r) row_of[mf.source[r]] = r;
  const Shape ls = mf.logits.shape();
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const std::size_t r = row_of[slot[i]];
    for (int k = 0; k < kMaskSize * kMaskSize; ++k) {
      const double z = mf.logits.data()[(r * ls.c + dets[i].class_id) * ls.plane() + k];
      dets[i].mask32[k] = static_cast<float>(detail::stable_sigmoid(z));
    }
  }
  return dets;
}

template <class T>
InferenceResult infer_image(const SprNet<T>& net, const Tensor<T>& image, const InferConfig& cfg) {
  NoGradGuard no_grad;
  InferenceResult res;
  const auto dense = net.dense_forward(image);
  std::vector<double> scores(dense.class_rows.numel());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = detail::stable_sigmoid(double(dense.class_rows.data()[i]));
  auto top = top_k_pixels(net.anchors(), scores, net.classes(), cfg.top_k);
  top.erase(std::remove_if(top.begin(), top.end(), [&](const Candidate& c) { return c.score < cfg.score_floor; }),
            top.end());
  res.candidates = top.size();
  const Shape s = image.shape();
  DecoderTrace trace;
  auto dets = decode_detections(net, dense, top, s.w, s.h, &trace);
  res.decoder_rows = trace.rows_decoded;
  res.detections = nms(dets, cfg.nms_iou);
  return res;
}

inline nlohmann::json detection_json(std::int64_t image_id, const Detection& d, int width, int height,
                                     double mask_threshold = 0.5) {
  return {{"image_id", image_id},
          {"class", d.class_id},
          {"score", d.score},
          {"box", nlohmann::json::array({d.box.x1, d.box.y1, d.box.x2, d.box.y2})},
          {"mask_rle", rle_encode(paste_mask(d, width, height, mask_threshold))}};
}

}  // namespace sprnet
