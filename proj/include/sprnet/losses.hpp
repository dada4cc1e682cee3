// Classification (focal), regression (smooth-L1) and mask (on-class binary
// cross-entropy) losses, each a fused op with a hand-written vjp.

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sprnet/label_assign.hpp"
#include "sprnet/ops.hpp"

namespace sprnet {

struct LossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  double beta = 1.0 / 9.0;
  double w_cls = 1.0;
  double w_reg = 1.0;
  double w_mask = 1.0;

  void validate() const {
    if (!(alpha > 0 && alpha < 1)) throw Error("LossConfig: alpha must lie in (0, 1)");
    if (gamma < 0) throw Error("LossConfig: gamma must be >= 0");
    if (!(beta > 0)) throw Error("LossConfig: beta must be > 0");
    if (w_cls < 0 || w_reg < 0 || w_mask < 0) throw Error("LossConfig: weights must be >= 0");
  }
};

namespace detail {

// log(sigmoid(z)) without overflow.
inline double log_sigmoid(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

}  // namespace detail

/// Sigmoid focal loss over logits [R, K, 1, 1]. row_class[r] is the target
/// class of a positive row, kNegative for background, kIgnore to skip the row.
/// The sum is divided by `normalizer`.
template <class T>
Tensor<T> focal_loss(const Tensor<T>& logits, const std::vector<int>& row_class, double alpha, double gamma,
                     double normalizer) {
  const Shape s = logits.shape();
  if (static_cast<std::size_t>(s.n) != row_class.size() || s.h != 1 || s.w != 1) {
    throw Error("focal_loss: logits " + s.str() + " do not match " + std::to_string(row_class.size()) +
                " anchor labels");
  }
  const int k = s.c;
  double total = 0.0;
  std::vector<T> dlogit(logits.numel(), T(0));
  auto x = logits.data();
  for (int r = 0; r < s.n; ++r) {
    if (row_class[r] == kIgnore) continue;
    if (row_class[r] >= k) throw Error("focal_loss: class id out of range");
    for (int c = 0; c < k; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * k + c;
      const bool target = row_class[r] == c;
      const double z = target ? double(x[i]) : -double(x[i]);
      const double at = target ? alpha : 1.0 - alpha;
      const double log_pt = detail::log_sigmoid(z);
      const double pt = std::exp(log_pt);
      const double q = 1.0 - pt;  // = sigmoid(-z)
      const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
      total += -at * mod * log_pt;
      // d/dz of -at (1-pt)^g log pt = at (1-pt)^g (g pt log pt - (1 - pt))
      const double dz = at * mod * (gamma * pt * log_pt - q);
      dlogit[i] = static_cast<T>((target ? dz : -dz) / normalizer);
    }
  }
  return detail::make_result<T>(
      Shape{1, 1, 1, 1}, std::vector<T>{static_cast<T>(total / normalizer)}, {&logits},
      [dlogit = std::move(dlogit)](detail::Node<T>& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * dlogit[i];
        }
      },
      "focal_loss");
}

/// Row targets for focal_loss from box labels and per-gt class ids.
inline std::vector<int> focal_targets(const BoxLabels& labels, const std::vector<int>& gt_classes) {
  std::vector<int> out(labels.assignment.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int a = labels.assignment[i];
    out[i] = a >= 0 ? gt_classes.at(static_cast<std::size_t>(a)) : a;
  }
  return out;
}

template <class T>
Tensor<T> focal_loss(const Tensor<T>& logits, const BoxLabels& labels, const std::vector<int>& gt_classes,
                     double alpha, double gamma) {
  const double norm = std::max<double>(1.0, static_cast<double>(labels.positives));
  return focal_loss(logits, focal_targets(labels, gt_classes), alpha, gamma, norm);
}

/// Smooth-L1 over the listed rows of pred [R, 4, 1, 1]:
/// 0.5 x^2 / beta for |x| < beta, |x| - 0.5 beta otherwise; summed and divided by normalizer.
template <class T>
Tensor<T> smooth_l1_loss(const Tensor<T>& pred, const std::vector<std::pair<std::size_t, Deltas>>& targets,
                         double beta, double normalizer) {
  const Shape s = pred.shape();
  if (s.c != 4 || s.h != 1 || s.w != 1) throw Error("smooth_l1_loss: pred must be [R,4,1,1], got " + s.str());
  double total = 0.0;
  std::vector<T> dpred(pred.numel(), T(0));
  auto p = pred.data();
  for (const auto& [row, t] : targets) {
    if (row >= static_cast<std::size_t>(s.n)) throw Error("smooth_l1_loss: row out of range");
    for (int j = 0; j < 4; ++j) {
      const double d = double(p[row * 4 + j]) - t[j];
      const double ad = std::abs(d);
      if (ad < beta) {
        total += 0.5 * d * d / beta;
        dpred[row * 4 + j] += static_cast<T>(d / beta / normalizer);
      } else {
        total += ad - 0.5 * beta;
        dpred[row * 4 + j] += static_cast<T>((d > 0 ? 1.0 : -1.0) / normalizer);
      }
    }
  }
  return detail::make_result<T>(
      Shape{1, 1, 1, 1}, std::vector<T>{static_cast<T>(total / normalizer)}, {&pred},
      [dpred = std::move(dpred)](detail::Node<T>& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * dpred[i];
        }
      },
      "smooth_l1_loss");
}

template <class T>
Tensor<T> smooth_l1_loss(const Tensor<T>& pred, const BoxLabels& labels, double beta) {
  std::vector<std::pair<std::size_t, Deltas>> rows;
  for (std::size_t i = 0; i < labels.assignment.size(); ++i) {
    if (labels.assignment[i] >= 0) rows.emplace_back(i, labels.targets[i]);
  }
  const double norm = std::max<double>(1.0, static_cast<double>(labels.positives));
  return smooth_l1_loss(pred, rows, beta, norm);
}

/// Mean binary cross-entropy with logits over every element of x against
/// 0/1 targets of the same length.
template <class T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& x, const std::vector<std::uint8_t>& targets) {
  if (targets.size() != x.numel()) throw Error("bce_with_logits_mean: target size mismatch");
  const double n = static_cast<double>(x.numel());
  double total = 0.0;
  std::vector<T> dx(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double z = v[i];
    const double t = targets[i];
    // -t log s(z) - (1-t) log s(-z)
    total += -t * detail::log_sigmoid(z) - (1.0 - t) * detail::log_sigmoid(-z);
    dx[i] = static_cast<T>((detail::stable_sigmoid(z) - t) / n);
  }
  return detail::make_result<T>(
      Shape{1, 1, 1, 1}, std::vector<T>{static_cast<T>(total / n)}, {&x},
      [dx = std::move(dx)](detail::Node<T>& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * dx[i];
        }
      },
      "bce_with_logits_mean");
}

/// BCE on the ground-truth class channel only, averaged over M*32*32
/// elements. Returns a constant zero when there are no samples.
template <class T>
Tensor<T> mask_bce_loss(const Tensor<T>& logits, const std::vector<MaskGrid>& targets,
                        const std::vector<int>& class_ids) {
  if (targets.empty()) return Tensor<T>::scalar(T(0));
  const Shape s = logits.shape();
  if (static_cast<std::size_t>(s.n) != targets.size() || class_ids.size() != targets.size() ||
      s.h != kMaskSize || s.w != kMaskSize) {
    throw Error("mask_bce_loss: logits " + s.str() + " do not match " + std::to_string(targets.size()) +
                " targets");
  }
  for (int c : class_ids) {
    if (c < 0 || c >= s.c) {
      throw Error("mask_bce_loss: class id " + std::to_string(c) + " outside [0, " + std::to_string(s.c) + ")");
    }
  }
  std::vector<std::uint8_t> flat;
  flat.reserve(targets.size() * kMaskSize * kMaskSize);
  for (const auto& g : targets) flat.insert(flat.end(), g.begin(), g.end());
  return bce_with_logits_mean(gather_channel_per_row(logits, class_ids), flat);
}

struct LossParts {
  double cls = 0;
  double reg = 0;
  double mask = 0;
  double total = 0;
};

/// w_cls L_cls + w_reg L_reg + w_mask L_mask; rejects non-finite parts.
template <class T>
Tensor<T> total_loss(const Tensor<T>& cls, const Tensor<T>& reg, const Tensor<T>& mask, const LossConfig& w) {
  const char* names[] = {"classification", "regression", "mask"};
  const Tensor<T>* parts[] = {&cls, &reg, &mask};
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(static_cast<double>(parts[i]->item()))) {
      throw Error(std::string("total_loss: ") + names[i] + " loss is not finite; training step aborted");
    }
  }
  return add(add(scale(cls, static_cast<T>(w.w_cls)), scale(reg, static_cast<T>(w.w_reg))),
             scale(mask, static_cast<T>(w.w_mask)));
}

}  // namespace sprnet
