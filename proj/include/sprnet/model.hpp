// The full network: backbone + gated pyramid, shared detection heads, and the
// single-pixel mask branch, with the anchor grid of the configured image size.

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "sprnet/config.hpp"

namespace sprnet {

template <class T>
struct DenseOutputs {
  FeaturePyramid<T> pyramid;
  Tensor<T> class_rows;  // [R, K, 1, 1], anchor-major over the whole grid
  Tensor<T> box_rows;    // [R, 4, 1, 1]
};

template <class T>
struct MaskForward {
  Tensor<T> logits;                  // [M, K, 32, 32]
  std::vector<std::size_t> source;   // row m decodes requested pixel source[m]
};

template <class T>
class SprNet {
 public:
  SprNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    normalize(cfg_);
    std::mt19937_64 rng(seed);
    backbone_ = GfpnBackbone<T>(cfg_.backbone, store_, rng);
    heads_ = DetectionHeads<T>(cfg_.head, store_, rng);
    mask_ = MaskBranch<T>(cfg_.backbone.pyramid_width, cfg_.fusion, cfg_.decoder, store_, rng);
    std::vector<LevelDims> dims;
    for (int s : cfg_.backbone.strides) dims.push_back({cfg_.image_size / s, cfg_.image_size / s, s});
    anchors_ = make_anchor_grid(dims, cfg_.anchors);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const AnchorGrid& anchors() const { return anchors_; }
  const GfpnBackbone<T>& backbone() const { return backbone_; }
  const DetectionHeads<T>& heads() const { return heads_; }
  const MaskBranch<T>& mask_branch() const { return mask_; }
  int classes() const { return cfg_.head.classes; }

  /// image: [1, C, S, S] with S = image_size.
  DenseOutputs<T> dense_forward(const Tensor<T>& image) const {
    const Shape s = image.shape();
    if (s.n != 1 || s.h != cfg_.image_size || s.w != cfg_.image_size) {
      throw Error("dense_forward: expected [1," + std::to_string(cfg_.backbone.in_channels) + "," +
                  std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) + "], got " + s.str());
    }
    DenseOutputs<T> out;
    out.pyramid = backbone_.forward(image);
    std::vector<Tensor<T>> cls;
    std::vector<Tensor<T>> box;
    for (const auto& level : out.pyramid.levels) {
      cls.push_back(heads_.class_head_forward(level));
      box.push_back(heads_.box_head_forward(level));
    }
    out.class_rows = anchor_major(cls, cfg_.head.classes);
    out.box_rows = anchor_major(box, 4);
    return out;
  }

  /// Decodes one mask per requested pixel. Only levels that own a requested
  /// pixel are fused; rows come back grouped by level.
  MaskForward<T> mask_logits(const FeaturePyramid<T>& pyr, const std::vector<PixelRef>& pixels,
                             DecoderTrace* trace = nullptr) const {
    if (pixels.empty()) throw Error("mask_logits: no pixels requested");
    std::map<int, std::vector<std::size_t>> by_level;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const auto& p = pixels[i];
      if (p.level < 0 || p.level >= static_cast<int>(pyr.levels.size())) {
        throw Error("mask_logits: pixel level " + std::to_string(p.level) + " out of range");
      }
      by_level[p.level].push_back(i);
    }
    MaskForward<T> out;
    std::vector<Tensor<T>> columns;
    for (const auto& [level, idx] : by_level) {
      const Tensor<T> fused = mask_.fuse_multiscale(pyr.levels[level]);
      std::vector<PixelIndex> at;
      for (std::size_t i : idx) {
        at.push_back({pixels[i].batch, pixels[i].y, pixels[i].x});
        out.source.push_back(i);
      }
      columns.push_back(gather_pixels(fused, at));
    }
    out.logits = mask_.reconstruct_mask(concat_batch(columns), trace);
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  GfpnBackbone<T> backbone_;
  DetectionHeads<T> heads_;
  MaskBranch<T> mask_;
  AnchorGrid anchors_;
};

}  // namespace sprnet
