// Tiny bottom-up backbone and the gated top-down feature pyramid.
//
// Each top-down junction fuses the 2x nearest-upsampled upper level `a` with
// the lateral projection `b` of the current stage. In gfpn mode one shared
// separable convolution scores both inputs:
//   out = a * sigmoid(sep(a)) + b * sigmoid(sep(b))
// In fpn mode the junction is the plain sum a + b.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "sprnet/layers.hpp"
#include "sprnet/ops.hpp"

namespace sprnet {

enum class PyramidMode { gfpn, fpn };

struct BackboneConfig {
  std::vector<int> widths{32, 64, 128};
  std::vector<int> strides{4, 8, 16};  // cumulative, one per stage
  int pyramid_width = 64;
  PyramidMode mode = PyramidMode::gfpn;
  bool hard_block = false;  // stop-gradient into the upper branch of every junction
  int in_channels = 3;

  void validate() const {
    if (widths.size() != strides.size() || widths.empty()) {
      throw Error("BackboneConfig: widths and strides must be non-empty and equal length");
    }
    int prev = 1;
    for (std::size_t i = 0; i < strides.size(); ++i) {
      const int s = strides[i];
      if (s <= prev || (s & (s - 1)) != 0) {
        throw Error("BackboneConfig: strides must be strictly increasing powers of two");
      }
      if (widths[i] <= 0) throw Error("BackboneConfig: widths must be positive");
      prev = s;
    }
    if (pyramid_width <= 0) throw Error("BackboneConfig: pyramid width must be positive");
  }
};

template <class T>
struct FeaturePyramid {
  std::vector<Tensor<T>> levels;  // low -> high stride, all pyramid_width wide
  std::vector<int> strides;
};

/// One separable conv (depthwise 3x3 + pointwise 1x1, P -> P) per junction.
template <class T>
struct GateParams {
  ConvParams<T> depthwise;
  ConvParams<T> pointwise;

  std::size_t count() const { return param_count(depthwise) + param_count(pointwise); }
};

/// Optional replacement score maps for one junction, used to pin a gate.
template <class T>
struct GateOverride {
  Tensor<T> score_a;
  Tensor<T> score_b;
};

template <class T>
Tensor<T> gate_score(const Tensor<T>& x, const GateParams<T>& g) {
  return sigmoid(separable_conv2d(x, g.depthwise, g.pointwise));
}

template <class T>
Tensor<T> gate_fuse(const Tensor<T>& upper_up, const Tensor<T>& lateral, const GateParams<T>* gate,
                    PyramidMode mode, bool hard_block = false,
                    const GateOverride<T>* override_scores = nullptr) {
  if (upper_up.shape() != lateral.shape()) {
    throw Error("gate_fuse: shape mismatch " + upper_up.shape().str() + " vs " + lateral.shape().str());
  }
  const Tensor<T> a = hard_block ? stop_gradient(upper_up) : upper_up;
  if (mode == PyramidMode::fpn) return add(a, lateral);
  if (gate == nullptr) throw Error("gate_fuse: gfpn mode needs gate parameters");
  const Tensor<T> sa = override_scores != nullptr && override_scores->score_a.defined()
                           ? override_scores->score_a
                           : gate_score(a, *gate);
  const Tensor<T> sb = override_scores != nullptr && override_scores->score_b.defined()
                           ? override_scores->score_b
                           : gate_score(lateral, *gate);
  return add(mul(a, sa), mul(lateral, sb));
}

template <class T>
Tensor<T> lateral_project(const Tensor<T>& stage_feature, const ConvParams<T>& proj) {
  return conv2d(stage_feature, proj);
}

template <class T>
class GfpnBackbone {
 public:
  GfpnBackbone() = default;

  GfpnBackbone(const BackboneConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    int in = cfg_.in_channels;
    int prev_stride = 1;
    for (std::size_t i = 0; i < cfg_.strides.size(); ++i) {
      std::vector<ConvParams<T>> stage;
      const std::string prefix = "backbone.stage" + std::to_string(i);
      int j = 0;
      for (int s = prev_stride; s < cfg_.strides[i]; s *= 2, ++j) {
        stage.push_back(make_conv(store, prefix + ".down" + std::to_string(j), in, cfg_.widths[i], 3,
                                  ConvSpec{2, 1, 1}, rng));
        in = cfg_.widths[i];
      }
      stage.push_back(make_conv(store, prefix + ".conv", in, cfg_.widths[i], 3, ConvSpec{1, 1, 1}, rng));
      stages_.push_back(std::move(stage));
      prev_stride = cfg_.strides[i];
    }
    const int p = cfg_.pyramid_width;
    for (std::size_t i = 0; i < cfg_.strides.size(); ++i) {
      const std::string prefix = "fpn.level" + std::to_string(i);
      laterals_.push_back(make_conv(store, prefix + ".lateral", cfg_.widths[i], p, 1, ConvSpec{}, rng,
                                    Init::lecun));
      smooth_.push_back(make_conv(store, prefix + ".smooth", p, p, 3, ConvSpec{1, 1, 1}, rng, Init::lecun));
    }
    for (std::size_t i = 0; cfg_.mode == PyramidMode::gfpn && i + 1 < cfg_.strides.size(); ++i) {
      const std::string prefix = "fpn.gate" + std::to_string(i);
      GateParams<T> g;
      g.depthwise = make_depthwise(store, prefix + ".depthwise", p, 3, ConvSpec{1, 1, 1}, rng);
      g.pointwise = make_conv(store, prefix + ".pointwise", p, p, 1, ConvSpec{}, rng, Init::lecun);
      gates_.push_back(g);
    }
  }

  const BackboneConfig& config() const { return cfg_; }
  BackboneConfig& config() { return cfg_; }

  std::vector<Tensor<T>> backbone_forward(const Tensor<T>& image) const {
    const Shape s = image.shape();
    const int multiple = cfg_.strides.back();
    if (s.h % multiple != 0 || s.w % multiple != 0) {
      throw Error("backbone_forward: input " + s.str() + " must have height and width divisible by " +
                  std::to_string(multiple));
    }
    if (s.c != cfg_.in_channels) {
      throw Error("backbone_forward: expected " + std::to_string(cfg_.in_channels) + " channels, got " +
                  s.str());
    }
    std::vector<Tensor<T>> out;
    Tensor<T> x = image;
    for (const auto& stage : stages_) {
      for (const auto& conv : stage) x = relu(conv2d(x, conv));
      out.push_back(x);
    }
    return out;
  }

  /// Top level is the lateral of the deepest stage; each lower level fuses the
  /// upsampled level above with its own lateral. Every level is smoothed by a 3x3 conv.
  FeaturePyramid<T> build_pyramid(const std::vector<Tensor<T>>& stages,
                                  const std::vector<GateOverride<T>>* overrides = nullptr) const {
    if (stages.size() < 2) throw Error("build_pyramid: need at least 2 stages");
    if (stages.size() != laterals_.size()) throw Error("build_pyramid: stage count does not match config");
    const std::size_t n = stages.size();
    std::vector<Tensor<T>> merged(n);
    merged[n - 1] = lateral_project(stages[n - 1], laterals_[n - 1]);
    for (std::size_t i = n - 1; i-- > 0;) {
      const auto up = upsample_nearest2x(merged[i + 1]);
      const auto lat = lateral_project(stages[i], laterals_[i]);
      const GateOverride<T>* ov = overrides != nullptr && i < overrides->size() ? &(*overrides)[i] : nullptr;
      const GateParams<T>* gate = i < gates_.size() ? &gates_[i] : nullptr;
      merged[i] = gate_fuse(up, lat, gate, cfg_.mode, cfg_.hard_block, ov);
    }
    FeaturePyramid<T> pyr;
    for (std::size_t i = 0; i < n; ++i) {
      pyr.levels.push_back(conv2d(merged[i], smooth_[i]));
      pyr.strides.push_back(cfg_.strides[i]);
    }
    return pyr;
  }

  FeaturePyramid<T> forward(const Tensor<T>& image) const { return build_pyramid(backbone_forward(image)); }

  const std::vector<GateParams<T>>& gates() const { return gates_; }
  const std::vector<ConvParams<T>>& laterals() const { return laterals_; }

  std::size_t gate_param_count() const {
    std::size_t total = 0;
    for (const auto& g : gates_) total += g.count();
    return total;
  }

 private:
  BackboneConfig cfg_;
  std::vector<std::vector<ConvParams<T>>> stages_;
  std::vector<ConvParams<T>> laterals_;
  std::vector<ConvParams<T>> smooth_;
  std::vector<GateParams<T>> gates_;
};

}  // namespace sprnet
