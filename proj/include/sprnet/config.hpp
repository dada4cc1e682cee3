// Run configuration as flat key=value text. Every default lives here, so a
// run is reproducible from its config file, seed and dataset.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sprnet/gfpn.hpp"
#include "sprnet/heads.hpp"
#include "sprnet/label_assign.hpp"
#include "sprnet/losses.hpp"
#include "sprnet/mask_branch.hpp"
#include "sprnet/param_store.hpp"

namespace sprnet {

struct ModelConfig {
  int image_size = 128;
  BackboneConfig backbone;
  HeadConfig head;
  AnchorConfig anchors;
  FusionConfig fusion;
  DecoderConfig decoder;
};

struct TrainConfig {
  int steps = 2000;
  int batch = 1;
  std::uint64_t seed = 1;
  AdamConfig adam;
  double clip = 1e-3;
  LossConfig loss;
  BoxLabelConfig labels;
  MaskSampleConfig mask_sampling;
  double divergence_limit = 1e6;
  int log_every = 1;
};

struct InferConfig {
  int top_k = 100;
  double score_floor = 0.05;
  double nms_iou = 0.5;
  double mask_threshold = 0.5;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  InferConfig infer;
};

inline std::string to_string(PyramidMode m) { return m == PyramidMode::gfpn ? "gfpn" : "fpn"; }

inline PyramidMode parse_pyramid_mode(const std::string& s) {
  if (s == "gfpn") return PyramidMode::gfpn;
  if (s == "fpn") return PyramidMode::fpn;
  throw Error("unknown pyramid mode '" + s + "' (expected gfpn or fpn)");
}

inline std::string to_string(FusionKind k) {
  switch (k) {
    case FusionKind::dilated: return "dilated";
    case FusionKind::consecutive: return "consecutive";
    case FusionKind::parallel1246: return "parallel1246";
  }
  return "?";
}

inline FusionKind parse_fusion_kind(const std::string& s) {
  if (s == "dilated") return FusionKind::dilated;
  if (s == "consecutive") return FusionKind::consecutive;
  if (s == "parallel1246") return FusionKind::parallel1246;
  throw Error("unknown fusion '" + s + "' (expected dilated, consecutive or parallel1246)");
}

inline bool parse_switch(const std::string& s) {
  if (s == "on" || s == "1" || s == "true") return true;
  if (s == "off" || s == "0" || s == "false") return false;
  throw Error("expected on/off, got '" + s + "'");
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error("not a number: '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s) {
  long long v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error("not an integer: '" + s + "'");
  return v;
}

template <class V, class F>
std::string join(const std::vector<V>& xs, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt(xs[i]);
  }
  return out;
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& p : split_commas(s)) out.push_back(static_cast<int>(parse_int(p)));
  return out;
}

inline std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& p : split_commas(s)) out.push_back(parse_double(p));
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Ordered so that to_text output is stable.
inline const std::vector<std::pair<std::string, Field>>& config_fields() {
  static const std::vector<std::pair<std::string, Field>> fields = [] {
    std::vector<std::pair<std::string, Field>> f;
    auto ints = [](auto& v) { return join(v, [](int x) { return std::to_string(x); }); };
    auto dbls = [](auto& v) { return join(v, format_double); };
#define SPRNET_INT(key, expr)                                                                   \
  f.push_back({key, {[](const RunConfig& c) { return std::to_string(c.expr); },                \
                     [](RunConfig& c, const std::string& s) { c.expr = static_cast<decltype(c.expr)>(parse_int(s)); }}})
#define SPRNET_DBL(key, expr)                                                                   \
  f.push_back({key, {[](const RunConfig& c) { return format_double(c.expr); },                 \
                     [](RunConfig& c, const std::string& s) { c.expr = parse_double(s); }}})
    SPRNET_INT("model.image_size", model.image_size);
    SPRNET_INT("model.in_channels", model.backbone.in_channels);
    f.push_back({"model.widths", {[ints](const RunConfig& c) { return ints(c.model.backbone.widths); },
                                  [](RunConfig& c, const std::string& s) { c.model.backbone.widths = parse_ints(s); }}});
    f.push_back({"model.strides", {[ints](const RunConfig& c) { return ints(c.model.backbone.strides); },
                                   [](RunConfig& c, const std::string& s) { c.model.backbone.strides = parse_ints(s); }}});
    SPRNET_INT("model.pyramid_width", model.backbone.pyramid_width);
    f.push_back({"model.pyramid", {[](const RunConfig& c) { return to_string(c.model.backbone.mode); },
                                   [](RunConfig& c, const std::string& s) { c.model.backbone.mode = parse_pyramid_mode(s); }}});
    f.push_back({"model.hard_block", {[](const RunConfig& c) { return std::string(c.model.backbone.hard_block ? "on" : "off"); },
                                      [](RunConfig& c, const std::string& s) { c.model.backbone.hard_block = parse_switch(s); }}});
    SPRNET_INT("model.head_depth", model.head.depth);
    SPRNET_INT("model.classes", model.head.classes);
    SPRNET_DBL("model.prior", model.head.prior);
    f.push_back({"model.anchor_sizes", {[dbls](const RunConfig& c) { return dbls(c.model.anchors.base_sizes); },
                                        [](RunConfig& c, const std::string& s) { c.model.anchors.base_sizes = parse_doubles(s); }}});
    f.push_back({"model.anchor_scales", {[dbls](const RunConfig& c) { return dbls(c.model.anchors.scales); },
                                         [](RunConfig& c, const std::string& s) { c.model.anchors.scales = parse_doubles(s); }}});
    f.push_back({"model.anchor_ratios", {[dbls](const RunConfig& c) { return dbls(c.model.anchors.ratios); },
                                         [](RunConfig& c, const std::string& s) { c.model.anchors.ratios = parse_doubles(s); }}});
    f.push_back({"model.fusion", {[](const RunConfig& c) { return to_string(c.model.fusion.kind); },
                                  [](RunConfig& c, const std::string& s) { c.model.fusion.kind = parse_fusion_kind(s); }}});
    SPRNET_INT("model.fusion_c1", model.fusion.c1);
    SPRNET_INT("model.fusion_cd", model.fusion.cd);
    SPRNET_INT("model.fusion_parallel_width", model.fusion.parallel_width);
    f.push_back({"model.deconv_widths", {[ints](const RunConfig& c) { return ints(c.model.decoder.deconv_widths); },
                                         [](RunConfig& c, const std::string& s) { c.model.decoder.deconv_widths = parse_ints(s); }}});
    f.push_back({"model.up_widths", {[ints](const RunConfig& c) { return ints(c.model.decoder.up_widths); },
                                     [](RunConfig& c, const std::string& s) { c.model.decoder.up_widths = parse_ints(s); }}});
    f.push_back({"model.shortcut", {[](const RunConfig& c) { return std::string(c.model.decoder.shortcut ? "on" : "off"); },
                                    [](RunConfig& c, const std::string& s) { c.model.decoder.shortcut = parse_switch(s); }}});
    SPRNET_INT("train.steps", train.steps);
    SPRNET_INT("train.batch", train.batch);
    SPRNET_INT("train.seed", train.seed);
    SPRNET_DBL("train.lr", train.adam.lr);
    SPRNET_DBL("train.beta1", train.adam.beta1);
    SPRNET_DBL("train.beta2", train.adam.beta2);
    SPRNET_DBL("train.adam_eps", train.adam.eps);
    SPRNET_DBL("train.clip", train.clip);
    SPRNET_DBL("train.focal_alpha", train.loss.alpha);
    SPRNET_DBL("train.focal_gamma", train.loss.gamma);
    SPRNET_DBL("train.smooth_l1_beta", train.loss.beta);
    SPRNET_DBL("train.w_cls", train.loss.w_cls);
    SPRNET_DBL("train.w_reg", train.loss.w_reg);
    SPRNET_DBL("train.w_mask", train.loss.w_mask);
    SPRNET_DBL("train.positive_iou", train.labels.positive_iou);
    SPRNET_DBL("train.negative_iou", train.labels.negative_iou);
    SPRNET_DBL("train.mask_iou", train.mask_sampling.iou_thresh);
    SPRNET_INT("train.mask_cap", train.mask_sampling.cap);
    SPRNET_DBL("train.divergence_limit", train.divergence_limit);
    SPRNET_INT("train.log_every", train.log_every);
    SPRNET_INT("infer.top_k", infer.top_k);
    SPRNET_DBL("infer.score_floor", infer.score_floor);
    SPRNET_DBL("infer.nms_iou", infer.nms_iou);
    SPRNET_DBL("infer.mask_threshold", infer.mask_threshold);
#undef SPRNET_INT
#undef SPRNET_DBL
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Keeps the classifier widths of heads and decoder in step with model.classes
/// and the head width in step with the pyramid.
inline void normalize(ModelConfig& m) {
  m.head.width = m.backbone.pyramid_width;
  m.head.anchors = m.anchors.per_pixel();
  m.decoder.classes = m.head.classes;
}

inline void validate(const RunConfig& c) {
  c.model.backbone.validate();
  c.model.head.validate();
  c.model.decoder.validate();
  c.train.loss.validate();
  if (c.model.image_size % c.model.backbone.strides.back() != 0) {
    throw Error("config: image_size must be divisible by the largest stride");
  }
  if (c.model.anchors.base_sizes.size() != c.model.backbone.strides.size()) {
    throw Error("config: one anchor base size per pyramid level is required");
  }
  if (c.train.steps < 0 || c.train.batch < 1) throw Error("config: steps >= 0 and batch >= 1 required");
  if (c.infer.top_k < 1) throw Error("config: infer.top_k must be >= 1");
}

inline std::string to_text(const RunConfig& c, const std::string& prefix = "") {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) {
    if (key.rfind(prefix, 0) != 0) continue;
    out += key + "=" + field.get(c) + "\n";
  }
  return out;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [k, field] : detail::config_fields()) {
    if (k == key) {
      try {
        field.set(c, value);
      } catch (const Error& e) {
        throw Error("config key '" + key + "': " + e.what());
      }
      return;
    }
  }
  throw Error("unknown config key '" + key + "'");
}

/// Lines are key=value; blank lines and lines starting with '#' are skipped.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": missing '='");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    try {
      set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  normalize(base.model);
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Identifies the parameter layout: any model.* change alters it.
inline std::uint64_t model_digest(const RunConfig& c) { return fnv1a(to_text(c, "model.")); }

/// Settings used for the toy training runs on 128x128 synthetic scenes.
/// Trains from scratch, so the step size is far larger than the 1e-5 default.
inline RunConfig desk_preset() {
  RunConfig c;
  c.train.adam.lr = 1e-3;
  normalize(c.model);
  return c;
}

}  // namespace sprnet
