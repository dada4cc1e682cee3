// Mask branch: multi-dilation fusion that packs instance morphology into
// every pixel, and the shared decoder that rebuilds a 32x32xK mask from the
// feature column of one sampled pixel.
//
// Decoder, per pixel:
//   1x1 -> 2x2 -> 4x4 -> 8x8   three k=2 stride-2 transposed convs, no activation
//   8x8 -> 16x16 -> 32x32      nearest 2x upsample + 3x3 conv + relu, twice
//   shortcut                   8x8 feature, nearest 4x, 1x1 projection, added to
//                              the input of the final 1x1 classifier (K channels)

#pragma once

#include <random>
#include <string>
#include <vector>

#include "sprnet/label_assign.hpp"
#include "sprnet/layers.hpp"
#include "sprnet/ops.hpp"

namespace sprnet {

enum class FusionKind {
  dilated,       // 1x1 (c1) + 3x3 dilations {2,4,6} (cd each), in parallel
  consecutive,   // four stacked 3x3 convs
  parallel1246,  // four parallel 3x3 convs, dilations {1,2,4,6}
};

struct FusionConfig {
  FusionKind kind = FusionKind::dilated;
  int c1 = 64;
  int cd = 32;
  int parallel_width = 40;

  int fused_width() const {
    switch (kind) {
      case FusionKind::dilated:
      case FusionKind::consecutive: return c1 + 3 * cd;
      case FusionKind::parallel1246: return 4 * parallel_width;
    }
    return 0;
  }
};

struct DecoderConfig {
  std::vector<int> deconv_widths{256, 128, 64};
  std::vector<int> up_widths{32, 32};
  bool shortcut = true;
  int classes = 3;

  void validate() const {
    if (deconv_widths.size() != 3) throw Error("DecoderConfig: exactly three deconv stages are required");
    if (up_widths.size() != 2) throw Error("DecoderConfig: exactly two upsample-conv stages are required");
    for (int w : deconv_widths)
      if (w < 1) throw Error("DecoderConfig: widths must be positive");
    for (int w : up_widths)
      if (w < 1) throw Error("DecoderConfig: widths must be positive");
    if (classes < 1) throw Error("DecoderConfig: classes must be >= 1");
  }
};

/// Spatial shapes visited by one decoder pass.
struct DecoderTrace {
  std::vector<Shape> stages;
  std::size_t rows_decoded = 0;  // pixel columns pushed through the decoder
};

template <class T>
Tensor<T> sample_pixel_feature(const Tensor<T>& fused, const PixelRef& ref) {
  return gather_pixels(fused, {PixelIndex{ref.batch, ref.y, ref.x}});
}

/// [M, K, 32, 32] -> [M, 1, 32, 32] keeping one class channel per row.
template <class T>
Tensor<T> select_mask_channel(const Tensor<T>& logits, const std::vector<int>& class_ids) {
  return gather_channel_per_row(logits, class_ids);
}

template <class T>
Tensor<T> select_mask_channel(const Tensor<T>& logits, int class_id) {
  return gather_channel_per_row(logits, std::vector<int>(static_cast<std::size_t>(logits.shape().n), class_id));
}

template <class T>
class MaskBranch {
 public:
  MaskBranch() = default;

  MaskBranch(int in_width, const FusionConfig& fusion, const DecoderConfig& decoder, ParamStore<T>& store,
             std::mt19937_64& rng)
      : fusion_(fusion), decoder_(decoder), in_width_(in_width) {
    decoder_.validate();
    switch (fusion_.kind) {
      case FusionKind::dilated:
        branches_.push_back(make_conv(store, "mask.fuse.c1", in_width, fusion_.c1, 1, ConvSpec{}, rng));
        for (int d : {2, 4, 6}) {
          branches_.push_back(make_conv(store, "mask.fuse.d" + std::to_string(d), in_width, fusion_.cd, 3,
                                        ConvSpec{1, d, d}, rng));
        }
        break;
      case FusionKind::parallel1246:
        for (int d : {1, 2, 4, 6}) {
          branches_.push_back(make_conv(store, "mask.fuse.d" + std::to_string(d), in_width,
                                        fusion_.parallel_width, 3, ConvSpec{1, d, d}, rng));
        }
        break;
      case FusionKind::consecutive: {
        int in = in_width;
        for (int i = 0; i < 3; ++i) {
          branches_.push_back(make_conv(store, "mask.fuse.seq" + std::to_string(i), in, fusion_.cd, 3,
                                        ConvSpec{1, 1, 1}, rng));
          in = fusion_.cd;
        }
        branches_.push_back(make_conv(store, "mask.fuse.seq3", in, fusion_.fused_width(), 3, ConvSpec{1, 1, 1},
                                      rng));
        break;
      }
    }
    int in = fusion_.fused_width();
    for (int i = 0; i < 3; ++i) {
      deconvs_.push_back(make_deconv(store, "mask.deconv" + std::to_string(i), in, decoder_.deconv_widths[i], 2,
                                     ConvSpec{2, 0, 1}, rng));
      in = decoder_.deconv_widths[i];
    }
    const int eight_width = in;
    for (int i = 0; i < 2; ++i) {
      ups_.push_back(make_conv(store, "mask.up" + std::to_string(i), in, decoder_.up_widths[i], 3,
                               ConvSpec{1, 1, 1}, rng));
      in = decoder_.up_widths[i];
    }
    if (decoder_.shortcut) {
      shortcut_ = make_conv(store, "mask.shortcut", eight_width, in, 1, ConvSpec{}, rng, Init::lecun);
    }
    classifier_ = make_conv(store, "mask.out", in, decoder_.classes, 1, ConvSpec{}, rng, Init::lecun);
  }

  const FusionConfig& fusion_config() const { return fusion_; }
  const DecoderConfig& decoder_config() const { return decoder_; }
  int fused_width() const { return fusion_.fused_width(); }

  Tensor<T> fuse_multiscale(const Tensor<T>& level) const {
    if (level.shape().c != in_width_) {
      throw Error("fuse_multiscale: level width " + std::to_string(level.shape().c) + " does not match " +
                  std::to_string(in_width_));
    }
    if (fusion_.kind == FusionKind::consecutive) {
      Tensor<T> x = level;
      for (const auto& c : branches_) x = relu(conv2d(x, c));
      return x;
    }
    std::vector<Tensor<T>> parts;
    for (const auto& c : branches_) parts.push_back(relu(conv2d(level, c)));
    return concat_channels(parts);
  }

  /// [M, C, 1, 1] pixel columns -> [M, last deconv width, 8, 8], purely affine.
  Tensor<T> decode_to_8x8(const Tensor<T>& pixels, DecoderTrace* trace = nullptr) const {
    const Shape s = pixels.shape();
    if (s.c != fused_width() || s.h != 1 || s.w != 1) {
      throw Error("reconstruct_mask: expected [M," + std::to_string(fused_width()) + ",1,1], got " + s.str());
    }
    if (trace != nullptr) {
      trace->stages.push_back(s);
      trace->rows_decoded += static_cast<std::size_t>(s.n);
    }
    Tensor<T> x = pixels;
    for (const auto& d : deconvs_) {
      x = conv2d_transpose(x, d);
      if (trace != nullptr) trace->stages.push_back(x.shape());
    }
    return x;
  }

  /// [M, C, 1, 1] -> [M, K, 32, 32] mask logits.
  Tensor<T> reconstruct_mask(const Tensor<T>& pixels, DecoderTrace* trace = nullptr) const {
    const Tensor<T> eight = decode_to_8x8(pixels, trace);
    Tensor<T> x = eight;
    for (const auto& u : ups_) {
      x = relu(conv2d(upsample_nearest2x(x), u));
      if (trace != nullptr) trace->stages.push_back(x.shape());
    }
    if (decoder_.shortcut) x = add(x, conv2d(upsample_nearest(eight, 4), shortcut_));
    const Tensor<T> out = conv2d(x, classifier_);
    if (trace != nullptr) trace->stages.push_back(out.shape());
    return out;
  }

 private:
  FusionConfig fusion_;
  DecoderConfig decoder_;
  int in_width_ = 0;
  std::vector<ConvParams<T>> branches_;
  std::vector<ConvParams<T>> deconvs_;
  std::vector<ConvParams<T>> ups_;
  ConvParams<T> shortcut_;
  ConvParams<T> classifier_;
};

}  // namespace sprnet
