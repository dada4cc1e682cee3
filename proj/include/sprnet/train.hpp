// End-to-end training: dense labels and mask targets per image, the three
// losses, backward, global-norm clipping and Adam.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "sprnet/dataset.hpp"
#include "sprnet/model.hpp"

namespace sprnet {

/// One training image with its labels resolved against the model's anchors.
template <class T>
struct PreparedSample {
  Tensor<T> image;
  std::vector<int> gt_classes;
  BoxLabels labels;
  MaskTargetSet masks;
};

template <class T>
PreparedSample<T> prepare_sample(const AnchorGrid& anchors, const Image& image,
                                 const std::vector<InstanceAnnotation>& instances, const TrainConfig& cfg) {
  PreparedSample<T> s;
  s.image = image_to_tensor<T>(image);
  std::vector<Box> boxes;
  for (const auto& inst : instances) {
    boxes.push_back(inst.box);
    s.gt_classes.push_back(inst.class_id);
  }
  s.labels = assign_box_labels(anchors, boxes, cfg.labels);
  s.masks = select_positive_pixels(anchors, instances, cfg.mask_sampling);
  return s;
}

struct StepMetrics {
  int step = 0;
  double cls = 0;
  double reg = 0;
  double mask = 0;
  double total = 0;
  double grad_norm = 0;  // before clipping
  std::size_t positives = 0;
  std::size_t mask_samples = 0;
};

inline const char* metrics_csv_header() { return "step,L_cls,L_reg,L_mask,total,grad_norm"; }

inline std::string metrics_csv_line(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g", m.step, m.cls, m.reg, m.mask, m.total, m.grad_norm);
  return buf;
}

class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Loss of one image. Backward has not been run.
template <class T>
Tensor<T> image_loss(const SprNet<T>& net, const PreparedSample<T>& s, const LossConfig& lc, LossParts* parts) {
  const auto dense = net.dense_forward(s.image);
  const Tensor<T> l_cls = focal_loss(dense.class_rows, s.labels, s.gt_classes, lc.alpha, lc.gamma);
  const Tensor<T> l_reg = smooth_l1_loss(dense.box_rows, s.labels, lc.beta);
  Tensor<T> l_mask = Tensor<T>::scalar(T(0));
  if (!s.masks.entries.empty() && lc.w_mask > 0) {
    std::vector<PixelRef> pixels;
    for (const auto& e : s.masks.entries) pixels.push_back(e.pixel);
    const auto mf = net.mask_logits(dense.pyramid, pixels);
    std::vector<MaskGrid> grids;
    std::vector<int> classes;
    for (std::size_t src : mf.source) {
      const auto& e = s.masks.entries[src];
      grids.push_back(e.grid);
      classes.push_back(s.gt_classes[static_cast<std::size_t>(e.gt)]);
    }
    l_mask = mask_bce_loss(mf.logits, grids, classes);
  }
  const Tensor<T> total = total_loss(l_cls, l_reg, l_mask, lc);
  if (parts != nullptr) {
    parts->cls = l_cls.item();
    parts->reg = l_reg.item();
    parts->mask = l_mask.item();
    parts->total = total.item();
  }
  return total;
}

/// Forward and backward over the batch (gradients averaged over images, in
/// batch order), then clip and Adam. With lr = 0 the parameters do not move.
template <class T>
StepMetrics train_step(SprNet<T>& net, const std::vector<const PreparedSample<T>*>& batch, const TrainConfig& cfg,
                       int step = 0) {
  if (batch.empty()) throw Error("train_step: empty batch");
  auto& store = net.store();
  store.zero_grad();
  StepMetrics m;
  m.step = step;
  const T inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
  for (const auto* s : batch) {
    LossParts parts;
    const Tensor<T> loss = image_loss(net, *s, cfg.loss, &parts);
    m.cls += parts.cls / batch.size();
    m.reg += parts.reg / batch.size();
    m.mask += parts.mask / batch.size();
    m.total += parts.total / batch.size();
    m.positives += s->labels.positives;
    m.mask_samples += s->masks.entries.size();
    if (!(parts.total <= cfg.divergence_limit)) {
      throw DivergenceError("training diverged at step " + std::to_string(step) + ": loss " +
                            std::to_string(parts.total) + " exceeds " + std::to_string(cfg.divergence_limit));
    }
    backward(scale(loss, inv));
  }
  m.grad_norm = clip_gradients(store, cfg.clip);
  // parameters without a gradient this step (e.g. the mask branch when no
  // pixel qualified) are skipped quietly
  AdamConfig adam = cfg.adam;
  adam.warn_missing_grad = false;
  adam_step(store, adam);
  return m;
}

/// Deterministic sampler: a fresh permutation of the training set per epoch,
/// drawn from the run seed.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed ^ 0x5eed5eed5eedULL) {
    if (n == 0) throw Error("EpochSampler: empty dataset");
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == 0) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
      }
      out.push_back(order_[pos_]);
      pos_ = (pos_ + 1) % order_.size();
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

template <class T>
std::vector<PreparedSample<T>> prepare_dataset(const SprNet<T>& net, const Dataset& ds, const TrainConfig& cfg) {
  std::vector<PreparedSample<T>> out;
  out.reserve(ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    out.push_back(prepare_sample<T>(net.anchors(), ds.load_image(i), ds.images[i].instances, cfg));
  }
  return out;
}

/// Runs cfg.steps steps; `on_step` sees every metrics record.
template <class T>
void train(SprNet<T>& net, const std::vector<PreparedSample<T>>& samples, const TrainConfig& cfg,
           const std::function<void(const StepMetrics&)>& on_step = {}) {
  EpochSampler sampler(samples.size(), cfg.seed);
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<const PreparedSample<T>*> batch;
    for (std::size_t i : sampler.next(static_cast<std::size_t>(cfg.batch))) batch.push_back(&samples[i]);
    const StepMetrics m = train_step(net, batch, cfg, step);
    if (on_step) on_step(m);
  }
}

}  // namespace sprnet
