// Classification and box-regression subnetworks, shared across pyramid levels.

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "sprnet/layers.hpp"
#include "sprnet/ops.hpp"

namespace sprnet {

struct HeadConfig {
  int depth = 4;
  int width = 64;
  int classes = 3;
  int anchors = 9;
  double prior = 0.01;  // initial foreground probability of the class head

  void validate() const {
    if (classes < 1) throw Error("HeadConfig: classes must be >= 1");
    if (anchors < 1 || depth < 0 || width < 1) throw Error("HeadConfig: invalid tower/anchor settings");
    if (!(prior > 0.0 && prior < 1.0)) throw Error("HeadConfig: prior must lie in (0, 1)");
  }
};

template <class T>
class DetectionHeads {
 public:
  DetectionHeads() = default;

  DetectionHeads(const HeadConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    const ConvSpec same{1, 1, 1};
    for (int i = 0; i < cfg_.depth; ++i) {
      cls_tower_.push_back(make_conv(store, "head.cls.tower" + std::to_string(i), cfg_.width, cfg_.width, 3,
                                     same, rng));
    }
    for (int i = 0; i < cfg_.depth; ++i) {
      box_tower_.push_back(make_conv(store, "head.box.tower" + std::to_string(i), cfg_.width, cfg_.width, 3,
                                     same, rng));
    }
    const double prior_bias = -std::log((1.0 - cfg_.prior) / cfg_.prior);
    cls_out_ = make_conv(store, "head.cls.out", cfg_.width, cfg_.anchors * cfg_.classes, 3, same, rng,
                         Init::small, prior_bias);
    box_out_ = make_conv(store, "head.box.out", cfg_.width, cfg_.anchors * 4, 3, same, rng, Init::small);
  }

  const HeadConfig& config() const { return cfg_; }

  /// [N, A*K, h, w] logits; channel a*K + k scores class k for anchor a.
  Tensor<T> class_head_forward(const Tensor<T>& level) const {
    return conv2d(tower(level, cls_tower_), cls_out_);
  }

  /// [N, A*4, h, w] deltas; channel a*4 + j is coordinate j of anchor a.
  Tensor<T> box_head_forward(const Tensor<T>& level) const {
    return conv2d(tower(level, box_tower_), box_out_);
  }

  const ConvParams<T>& class_output() const { return cls_out_; }
  const ConvParams<T>& box_output() const { return box_out_; }

 private:
  Tensor<T> tower(const Tensor<T>& level, const std::vector<ConvParams<T>>& convs) const {
    if (level.shape().c != cfg_.width) {
      throw Error("head: level width " + std::to_string(level.shape().c) + " does not match " +
                  std::to_string(cfg_.width));
    }
    Tensor<T> x = level;
    for (const auto& c : convs) x = relu(conv2d(x, c));
    return x;
  }

  HeadConfig cfg_;
  std::vector<ConvParams<T>> cls_tower_;
  std::vector<ConvParams<T>> box_tower_;
  ConvParams<T> cls_out_;
  ConvParams<T> box_out_;
};

}  // namespace sprnet
