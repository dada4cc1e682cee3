// COCO-protocol box and mask AP/AR.
//
// Per (image, class): detections sorted by score and cut to maxDet; greedy
// matching at each IoU threshold, each detection taking the unmatched gt of
// highest IoU >= threshold. Ground truth outside the area range is ignored, as
// are detections matched to it and unmatched detections outside the range.
// Precision is made monotone and sampled on 101 recall points.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "sprnet/mask.hpp"

namespace sprnet {

enum class IouKind { box, mask };

struct EvalGt {
  std::int64_t image_id = 0;
  int class_id = 0;
  Box box;
  BinaryMask mask;
};

struct EvalDet {
  std::int64_t image_id = 0;
  int class_id = 0;
  double score = 0;
  Box box;
  BinaryMask mask;
};

struct AreaRange {
  std::string name;
  double lo;
  double hi;
};

struct EvalConfig {
  std::vector<double> iou_thresholds;
  std::vector<AreaRange> areas{{"all", 0, 1e10}, {"small", 0, 32.0 * 32}, {"medium", 32.0 * 32, 96.0 * 96},
                               {"large", 96.0 * 96, 1e10}};
  std::vector<int> max_dets{1, 10, 100};
  int recall_points = 101;

  EvalConfig() {
    for (int i = 0; i < 10; ++i) iou_thresholds.push_back(0.5 + 0.05 * i);
  }
};

/// |a & b| / |a | b|; both empty gives 0 and sets *degenerate.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b, bool* degenerate = nullptr) {
  if (a.width != b.width || a.height != b.height) {
    throw Error("mask_iou: dimension mismatch " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  if (degenerate != nullptr) *degenerate = uni == 0;
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

struct MatchResult {
  std::vector<int> det_match;   // matched gt index or -1
  std::vector<bool> det_ignore;
  std::vector<int> gt_match;    // matched det index or -1
};

/// dets sorted by score descending, all of one (image, class). gt_ignore flags
/// ground truth outside the area range; det_area_out flags detections outside it.
inline MatchResult match_detections(const std::vector<std::vector<double>>& ious, std::size_t n_gt,
                                    const std::vector<bool>& gt_ignore, const std::vector<bool>& det_area_out,
                                    double thresh) {
  const std::size_t n_det = ious.size();
  MatchResult r;
  r.det_match.assign(n_det, -1);
  r.det_ignore.assign(n_det, false);
  r.gt_match.assign(n_gt, -1);
  // regular gts are preferred over ignored ones
  std::vector<std::size_t> order(n_gt);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return !gt_ignore[a] && gt_ignore[b]; });
  const double t = std::min(thresh, 1 - 1e-10);
  for (std::size_t d = 0; d < n_det; ++d) {
    double best = t;
    int m = -1;
    for (std::size_t g : order) {
      if (r.gt_match[g] >= 0) continue;
      if (m >= 0 && !gt_ignore[static_cast<std::size_t>(m)] && gt_ignore[g]) break;
      const double iou = ious[d][g];
      if (iou < best || (m >= 0 && iou == best)) continue;
      best = iou;
      m = static_cast<int>(g);
    }
    if (m >= 0) {
      r.det_match[d] = m;
      r.gt_match[static_cast<std::size_t>(m)] = static_cast<int>(d);
      r.det_ignore[d] = gt_ignore[static_cast<std::size_t>(m)];
    } else {
      r.det_ignore[d] = det_area_out[d];
    }
  }
  return r;
}

/// Flags ordered by score descending; ignored detections already removed.
/// Returns the 101-point interpolated AP, or -1 when n_gt == 0.
inline double average_precision(const std::vector<bool>& tp, std::size_t n_gt, int recall_points = 101,
                                std::vector<double>* curve = nullptr, double* final_recall = nullptr) {
  if (curve != nullptr) curve->assign(static_cast<std::size_t>(recall_points), 0.0);
  if (n_gt == 0) {
    if (final_recall != nullptr) *final_recall = -1;
    return -1.0;
  }
  const std::size_t n = tp.size();
  std::vector<double> rc(n), pr(n);
  double tps = 0, fps = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tps += tp[i];
    fps += !tp[i];
    rc[i] = tps / double(n_gt);
    pr[i] = tps / (tps + fps + std::numeric_limits<double>::epsilon());
  }
  if (final_recall != nullptr) *final_recall = n ? rc.back() : 0.0;
  for (std::size_t i = n; i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
  double sum = 0;
  for (int r = 0; r < recall_points; ++r) {
    const double thr = double(r) / (recall_points - 1);
    const auto it = std::lower_bound(rc.begin(), rc.end(), thr);
    const double q = it == rc.end() ? 0.0 : pr[static_cast<std::size_t>(it - rc.begin())];
    if (curve != nullptr) (*curve)[static_cast<std::size_t>(r)] = q;
    sum += q;
  }
  return sum / recall_points;
}

struct MetricSet {
  double ap = 0, ap50 = 0, ap75 = 0, ap_s = 0, ap_m = 0, ap_l = 0;
  double ar1 = 0, ar10 = 0, ar100 = 0, ar_s = 0, ar_m = 0, ar_l = 0;
};

struct EvalResult {
  MetricSet box;
  MetricSet mask;
  // class -> 101 precisions at IoU 0.5, all areas, 100 detections
  std::map<int, std::vector<double>> box_pr50;
  std::map<int, std::vector<double>> mask_pr50;
};

namespace detail {

struct Accumulated {
  // [t][a][m][class] -> value; -1 when the class has no gt in that setting
  std::vector<std::vector<std::vector<std::map<int, double>>>> precision;
  std::vector<std::vector<std::vector<std::map<int, double>>>> recall;
  std::map<int, std::vector<double>> pr50;
};

inline double gt_area(const EvalGt& g, IouKind) { return static_cast<double>(g.mask.area()); }

inline double det_area(const EvalDet& d, IouKind kind) {
  return kind == IouKind::mask ? static_cast<double>(d.mask.area()) : d.box.area();
}

inline double mean_valid(const std::vector<double>& xs) {
  double s = 0;
  int n = 0;
  for (double x : xs)
    if (x > -1) s += x, ++n;
  return n ? s / n : -1.0;
}

inline Accumulated accumulate(const std::vector<EvalGt>& gts, const std::vector<EvalDet>& dets, IouKind kind,
                              const EvalConfig& cfg) {
  // group by (image, class)
  std::map<std::pair<std::int64_t, int>, std::vector<std::size_t>> g_of, d_of;
  std::vector<int> classes;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    g_of[{gts[i].image_id, gts[i].class_id}].push_back(i);
    classes.push_back(gts[i].class_id);
  }
  for (std::size_t i = 0; i < dets.size(); ++i) {
    d_of[{dets[i].image_id, dets[i].class_id}].push_back(i);
    classes.push_back(dets[i].class_id);
  }
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::vector<std::pair<std::int64_t, int>> keys;
  for (const auto& [k, v] : g_of) keys.push_back(k);
  for (const auto& [k, v] : d_of)
    if (!g_of.count(k)) keys.push_back(k);
  std::sort(keys.begin(), keys.end());

  const std::size_t T = cfg.iou_thresholds.size(), A = cfg.areas.size(), M = cfg.max_dets.size();
  const int max_det = *std::max_element(cfg.max_dets.begin(), cfg.max_dets.end());

  struct Cell {
    std::vector<double> scores;      // of the kept (sorted) dets
    std::vector<std::vector<MatchResult>> match;  // [t][a]
    std::vector<std::size_t> npig;   // [a]
  };
  std::map<std::pair<std::int64_t, int>, Cell> cells;
  for (const auto& key : keys) {
    std::vector<std::size_t> gi = g_of.count(key) ? g_of[key] : std::vector<std::size_t>{};
    std::vector<std::size_t> di = d_of.count(key) ? d_of[key] : std::vector<std::size_t>{};
    std::stable_sort(di.begin(), di.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    if (di.size() > static_cast<std::size_t>(max_det)) di.resize(static_cast<std::size_t>(max_det));
    std::vector<std::vector<double>> ious(di.size(), std::vector<double>(gi.size()));
    for (std::size_t d = 0; d < di.size(); ++d)
      for (std::size_t g = 0; g < gi.size(); ++g)
        ious[d][g] = kind == IouKind::box ? box_iou(dets[di[d]].box, gts[gi[g]].box)
                                          : mask_iou(dets[di[d]].mask, gts[gi[g]].mask);
    Cell c;
    for (std::size_t d : di) c.scores.push_back(dets[d].score);
    c.match.assign(T, std::vector<MatchResult>(A));
    c.npig.assign(A, 0);
    for (std::size_t a = 0; a < A; ++a) {
      const auto& ar = cfg.areas[a];
      std::vector<bool> gt_ig(gi.size()), det_out(di.size());
      for (std::size_t g = 0; g < gi.size(); ++g) {
        const double area = gt_area(gts[gi[g]], kind);
        gt_ig[g] = area < ar.lo || area > ar.hi;
        c.npig[a] += !gt_ig[g];
      }
      for (std::size_t d = 0; d < di.size(); ++d) {
        const double area = det_area(dets[di[d]], kind);
        det_out[d] = area < ar.lo || area > ar.hi;
      }
      for (std::size_t t = 0; t < T; ++t) c.match[t][a] = match_detections(ious, gi.size(), gt_ig, det_out, cfg.iou_thresholds[t]);
    }
    cells.emplace(key, std::move(c));
  }

  Accumulated acc;
  acc.precision.assign(T, std::vector<std::vector<std::map<int, double>>>(A, std::vector<std::map<int, double>>(M)));
  acc.recall = acc.precision;
  for (int cls : classes) {
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t m = 0; m < M; ++m) {
        const std::size_t cap = static_cast<std::size_t>(cfg.max_dets[m]);
        std::size_t npig = 0;
        // (score, cell order, det index) so the merge is deterministic
        std::vector<std::tuple<double, std::size_t, const Cell*, std::size_t>> pool;
        std::size_t cell_no = 0;
        for (const auto& [key, c] : cells) {
          ++cell_no;
          if (key.second != cls) continue;
          npig += c.npig[a];
          for (std::size_t d = 0; d < std::min(cap, c.scores.size()); ++d) pool.emplace_back(c.scores[d], cell_no, &c, d);
        }
        std::stable_sort(pool.begin(), pool.end(), [](const auto& x, const auto& y) { return std::get<0>(x) > std::get<0>(y); });
        for (std::size_t t = 0; t < T; ++t) {
          std::vector<bool> tp;
          for (const auto& [score, no, c, d] : pool) {
            const auto& mr = c->match[t][a];
            if (mr.det_ignore[d]) continue;
            tp.push_back(mr.det_match[d] >= 0);
          }
          std::vector<double> curve;
          double rec = 0;
          const double ap = average_precision(tp, npig, cfg.recall_points, &curve, &rec);
          acc.precision[t][a][m][cls] = ap;
          acc.recall[t][a][m][cls] = rec;
          if (t == 0 && a == 0 && m + 1 == M) acc.pr50[cls] = curve;
        }
      }
    }
  }
  return acc;
}

inline MetricSet summarize_kind(const Accumulated& acc, const EvalConfig& cfg) {
  const std::size_t T = cfg.iou_thresholds.size();
  const std::size_t last_m = cfg.max_dets.size() - 1;
  auto collect = [&](const auto& table, int t_only, std::size_t a, std::size_t m) {
    std::vector<double> xs;
    for (std::size_t t = 0; t < T; ++t) {
      if (t_only >= 0 && static_cast<int>(t) != t_only) continue;
      for (const auto& [cls, v] : table[t][a][m]) xs.push_back(v);
    }
    return mean_valid(xs);
  };
  auto t_index = [&](double thr) {
    for (std::size_t t = 0; t < T; ++t)
      if (std::abs(cfg.iou_thresholds[t] - thr) < 1e-9) return static_cast<int>(t);
    return -2;
  };
  MetricSet s;
  s.ap = collect(acc.precision, -1, 0, last_m);
  s.ap50 = collect(acc.precision, t_index(0.5), 0, last_m);
  s.ap75 = collect(acc.precision, t_index(0.75), 0, last_m);
  s.ap_s = collect(acc.precision, -1, 1, last_m);
  s.ap_m = collect(acc.precision, -1, 2, last_m);
  s.ap_l = collect(acc.precision, -1, 3, last_m);
  s.ar1 = collect(acc.recall, -1, 0, 0);
  s.ar10 = collect(acc.recall, -1, 0, 1);
  s.ar100 = collect(acc.recall, -1, 0, last_m);
  s.ar_s = collect(acc.recall, -1, 1, last_m);
  s.ar_m = collect(acc.recall, -1, 2, last_m);
  s.ar_l = collect(acc.recall, -1, 3, last_m);
  return s;
}

}  // namespace detail

/// Metrics are in [0, 1]; -1 marks a metric with no ground truth in its
/// setting (e.g. no large objects).
inline EvalResult summarize(const std::vector<EvalGt>& gts, const std::vector<EvalDet>& dets,
                            const EvalConfig& cfg = {}) {
  if (cfg.areas.size() != 4 || cfg.max_dets.size() != 3) throw Error("summarize: expects 4 area ranges and 3 caps");
  EvalResult r;
  const auto box = detail::accumulate(gts, dets, IouKind::box, cfg);
  const auto mask = detail::accumulate(gts, dets, IouKind::mask, cfg);
  r.box = detail::summarize_kind(box, cfg);
  r.mask = detail::summarize_kind(mask, cfg);
  r.box_pr50 = box.pr50;
  r.mask_pr50 = mask.pr50;
  return r;
}

inline nlohmann::ordered_json metrics_json(const MetricSet& m) {
  nlohmann::ordered_json j;
  j["AP"] = m.ap;
  j["AP50"] = m.ap50;
  j["AP75"] = m.ap75;
  j["AP_S"] = m.ap_s;
  j["AP_M"] = m.ap_m;
  j["AP_L"] = m.ap_l;
  j["AR1"] = m.ar1;
  j["AR10"] = m.ar10;
  j["AR100"] = m.ar100;
  j["AR_S"] = m.ar_s;
  j["AR_M"] = m.ar_m;
  j["AR_L"] = m.ar_l;
  return j;
}

inline std::string eval_result_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["box"] = metrics_json(r.box);
  j["mask"] = metrics_json(r.mask);
  return j.dump(2) + "\n";
}

/// kind,class,recall,precision at IoU 0.5, all areas, 100 detections.
inline std::string pr_curve_csv(const EvalResult& r, int recall_points = 101) {
  std::string out = "kind,class,recall,precision\n";
  char buf[96];
  for (const auto* table : {&r.box_pr50, &r.mask_pr50}) {
    const char* kind = table == &r.box_pr50 ? "box" : "mask";
    for (const auto& [cls, curve] : *table) {
      for (std::size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%s,%d,%.2f,%.17g\n", kind, cls, double(i) / (recall_points - 1), curve[i]);
        out += buf;
      }
    }
  }
  return out;
}

}  // namespace sprnet
