// Named finite-difference checks for every differentiable op, each run over
// randomized shapes and settings. Every op output is reduced to a scalar as
// sum(op(x) * R) with a fixed random R, so all of its Jacobian is exercised.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sprnet/gfpn.hpp"
#include "sprnet/gradcheck.hpp"
#include "sprnet/losses.hpp"
#include "sprnet/mask_branch.hpp"
#include "sprnet/train.hpp"

namespace sprnet {

struct OpCase {
  ScalarFn fn;
  std::vector<Tensor<double>> inputs;
};

struct OpSpec {
  std::string name;
  std::function<OpCase(std::mt19937_64&)> make;
};

struct OpReport {
  std::string name;
  int trials = 0;
  double max_rel_error = 0;
  bool passed = false;
};

namespace detail {

inline int pick(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline Tensor<double> uniform(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(s);
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data()) v = d(rng);
  return t;
}

/// |v| in [gap, 1], so an eps-sized step never crosses zero.
inline Tensor<double> away_from_zero(Shape s, std::mt19937_64& rng, double gap) {
  Tensor<double> t = uniform(s, rng, gap, 1);
  std::bernoulli_distribution flip(0.5);
  for (double& v : t.data())
    if (flip(rng)) v = -v;
  return t;
}

inline Shape small_shape(std::mt19937_64& rng) { return {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}; }

/// Wraps a tensor-valued op into the scalar sum(op * R).
inline ScalarFn project(std::function<Tensor<double>(const std::vector<Tensor<double>>&)> op, Shape out,
                        std::mt19937_64& rng) {
  const Tensor<double> r = uniform(out, rng);
  return [op, r](const std::vector<Tensor<double>>& in) { return sum(mul(op(in), r)); };
}

inline OpCase unary(std::mt19937_64& rng, Tensor<double> x,
                    std::function<Tensor<double>(const Tensor<double>&)> op) {
  NoGradGuard g;
  const Shape out = op(x).shape();
  return {project([op](const auto& in) { return op(in[0]); }, out, rng), {x}};
}

inline ConvSpec random_spec(std::mt19937_64& rng, int k) {
  return {pick(rng, 1, 2), pick(rng, 0, k - 1), pick(rng, 1, 2)};
}

inline OpCase conv_case(std::mt19937_64& rng) {
  const int k = pick(rng, 1, 3), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
  const ConvSpec s = random_spec(rng, k);
  const int need = s.dilation * (k - 1) + 1;
  const Shape xs{pick(rng, 1, 2), cin, need + pick(rng, 0, 3), need + pick(rng, 0, 3)};
  std::vector<Tensor<double>> in{uniform(xs, rng), uniform({cout, cin, k, k}, rng), uniform({cout, 1, 1, 1}, rng)};
  const Shape out{xs.n, cout, conv_output_size(xs.h, k, s), conv_output_size(xs.w, k, s)};
  return {project([s](const auto& v) { return conv2d(v[0], v[1], v[2], s); }, out, rng), in};
}

inline OpCase deconv_case(std::mt19937_64& rng) {
  const int k = pick(rng, 1, 3), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
  ConvSpec s;
  Shape xs;
  do {
    s = random_spec(rng, k);
    xs = {pick(rng, 1, 2), cin, pick(rng, 1, 4), pick(rng, 1, 4)};
  } while (conv_transpose_output_size(xs.h, k, s) < 1 || conv_transpose_output_size(xs.w, k, s) < 1);
  std::vector<Tensor<double>> in{uniform(xs, rng), uniform({cin, cout, k, k}, rng), uniform({cout, 1, 1, 1}, rng)};
  const Shape out{xs.n, cout, conv_transpose_output_size(xs.h, k, s), conv_transpose_output_size(xs.w, k, s)};
  return {project([s](const auto& v) { return conv2d_transpose(v[0], v[1], v[2], s); }, out, rng), in};
}

inline OpCase depthwise_case(std::mt19937_64& rng) {
  const int k = pick(rng, 1, 3), c = pick(rng, 1, 3);
  const ConvSpec s = random_spec(rng, k);
  const int need = s.dilation * (k - 1) + 1;
  const Shape xs{pick(rng, 1, 2), c, need + pick(rng, 0, 3), need + pick(rng, 0, 3)};
  std::vector<Tensor<double>> in{uniform(xs, rng), uniform({c, 1, k, k}, rng), uniform({c, 1, 1, 1}, rng)};
  const Shape out{xs.n, c, conv_output_size(xs.h, k, s), conv_output_size(xs.w, k, s)};
  return {project([s](const auto& v) { return depthwise_conv2d(v[0], v[1], v[2], s); }, out, rng), in};
}

inline OpCase gate_case(std::mt19937_64& rng) {
  const int p = pick(rng, 1, 3);
  const Shape xs{1, p, pick(rng, 1, 4), pick(rng, 1, 4)};
  std::vector<Tensor<double>> in{uniform(xs, rng), uniform(xs, rng), uniform({p, 1, 3, 3}, rng),
                                 uniform({p, 1, 1, 1}, rng), uniform({p, p, 1, 1}, rng), uniform({p, 1, 1, 1}, rng)};
  return {project(
              [](const auto& v) {
                GateParams<double> g{{v[2], v[3], ConvSpec{1, 1, 1}}, {v[4], v[5], ConvSpec{}}};
                return gate_fuse(v[0], v[1], &g, PyramidMode::gfpn);
              },
              xs, rng),
          in};
}

}  // namespace detail

inline const std::vector<OpSpec>& gradcheck_ops() {
  using namespace detail;
  using V = std::vector<Tensor<double>>;
  static const std::vector<OpSpec> ops = {
      {"add",
       [](auto& rng) {
         const Shape s = small_shape(rng);
         return OpCase{project([](const V& v) { return add(v[0], v[1]); }, s, rng), {uniform(s, rng), uniform(s, rng)}};
       }},
      {"mul",
       [](auto& rng) {
         const Shape s = small_shape(rng);
         return OpCase{project([](const V& v) { return mul(v[0], v[1]); }, s, rng), {uniform(s, rng), uniform(s, rng)}};
       }},
      {"scale",
       [](auto& rng) {
         const double f = uniform({1, 1, 1, 1}, rng, -3, 3).item();
         return unary(rng, uniform(small_shape(rng), rng), [f](const Tensor<double>& x) { return scale(x, f); });
       }},
      {"sum", [](auto& rng) { return unary(rng, uniform(small_shape(rng), rng), [](const Tensor<double>& x) { return sum(x); }); }},
      {"sigmoid",
       [](auto& rng) {
         return unary(rng, uniform(small_shape(rng), rng, -5, 5), [](const Tensor<double>& x) { return sigmoid(x); });
       }},
      {"relu",
       [](auto& rng) {
         return unary(rng, away_from_zero(small_shape(rng), rng, 1e-3), [](const Tensor<double>& x) { return relu(x); });
       }},
      {"conv2d", conv_case},
      {"conv2d_transpose", deconv_case},
      {"depthwise_conv2d", depthwise_case},
      {"gate_fuse", gate_case},
      {"concat_channels",
       [](auto& rng) {
         const int parts = pick(rng, 1, 3), n = pick(rng, 1, 2), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
         V in;
         int c = 0;
         for (int i = 0; i < parts; ++i) {
           in.push_back(uniform({n, pick(rng, 1, 3), h, w}, rng));
           c += in.back().shape().c;
         }
         return OpCase{project([](const V& v) { return concat_channels(v); }, {n, c, h, w}, rng), in};
       }},
      {"concat_batch",
       [](auto& rng) {
         const int parts = pick(rng, 1, 3), c = pick(rng, 1, 3), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
         V in;
         int n = 0;
         for (int i = 0; i < parts; ++i) {
           in.push_back(uniform({pick(rng, 1, 2), c, h, w}, rng));
           n += in.back().shape().n;
         }
         return OpCase{project([](const V& v) { return concat_batch(v); }, {n, c, h, w}, rng), in};
       }},
      {"slice_channels",
       [](auto& rng) {
         const Shape s{pick(rng, 1, 2), pick(rng, 1, 5), pick(rng, 1, 3), pick(rng, 1, 3)};
         const int b = pick(rng, 0, s.c - 1), n = pick(rng, 1, s.c - b);
         return unary(rng, uniform(s, rng), [b, n](const Tensor<double>& x) { return slice_channels(x, b, n); });
       }},
      {"upsample_nearest",
       [](auto& rng) {
         const int f = pick(rng, 1, 4);
         return unary(rng, uniform(small_shape(rng), rng), [f](const Tensor<double>& x) { return upsample_nearest(x, f); });
       }},
      {"upsample_nearest2x",
       [](auto& rng) {
         return unary(rng, uniform(small_shape(rng), rng), [](const Tensor<double>& x) { return upsample_nearest2x(x); });
       }},
      {"upsample_bilinear",
       [](auto& rng) {
         const int oh = pick(rng, 1, 9), ow = pick(rng, 1, 9);
         return unary(rng, uniform(small_shape(rng), rng),
                      [oh, ow](const Tensor<double>& x) { return upsample_bilinear(x, oh, ow); });
       }},
      {"gather_pixels",
       [](auto& rng) {
         const Shape s = small_shape(rng);
         std::vector<PixelIndex> at(static_cast<std::size_t>(pick(rng, 1, 5)));
         for (auto& p : at) p = {pick(rng, 0, s.n - 1), pick(rng, 0, s.h - 1), pick(rng, 0, s.w - 1)};
         return unary(rng, uniform(s, rng), [at](const Tensor<double>& x) { return gather_pixels(x, at); });
       }},
      {"gather_channel_per_row",
       [](auto& rng) {
         const Shape s = small_shape(rng);
         std::vector<int> ch(static_cast<std::size_t>(s.n));
         for (int& c : ch) c = pick(rng, 0, s.c - 1);
         return unary(rng, uniform(s, rng), [ch](const Tensor<double>& x) { return gather_channel_per_row(x, ch); });
       }},
      {"anchor_major",
       [](auto& rng) {
         const int per = pick(rng, 1, 3), a = pick(rng, 1, 2), levels = pick(rng, 1, 3);
         V in;
         int rows = 0;
         for (int l = 0; l < levels; ++l) {
           const int h = pick(rng, 1, 3), w = pick(rng, 1, 3);
           in.push_back(uniform({1, a * per, h, w}, rng));
           rows += h * w * a;
         }
         return OpCase{project([per](const V& v) { return anchor_major(v, per); }, {rows, per, 1, 1}, rng), in};
       }},
      {"focal_loss",
       [](auto& rng) {
         const int r = pick(rng, 1, 6), k = pick(rng, 1, 3);
         std::vector<int> rows(static_cast<std::size_t>(r));
         for (int& c : rows) c = pick(rng, -2, k - 1);  // -2 ignore, -1 negative
         const double gamma = uniform({1, 1, 1, 1}, rng, 0, 3).item(), norm = pick(rng, 1, 4);
         return OpCase{[rows, gamma, norm](const V& v) { return focal_loss(v[0], rows, 0.25, gamma, norm); },
                       {uniform({r, k, 1, 1}, rng, -4, 4)}};
       }},
      {"smooth_l1",
       [](auto& rng) {
         const int r = pick(rng, 1, 4);
         const double beta = 1.0 / 9;
         const auto x = uniform({r, 4, 1, 1}, rng);
         // residuals stay clear of the |r| = beta seam: |r| < 0.8 beta or > 1.3 beta
         std::vector<std::pair<std::size_t, Deltas>> t;
         for (int i = 0; i < r; ++i) {
           if (pick(rng, 0, 3) == 0) continue;
           Deltas d;
           for (int j = 0; j < 4; ++j) {
             double res = pick(rng, 0, 1) ? uniform({1, 1, 1, 1}, rng, 0, 0.8 * beta).item()
                                          : uniform({1, 1, 1, 1}, rng, 1.3 * beta, 1).item();
             if (pick(rng, 0, 1)) res = -res;
             d[j] = x.data()[std::size_t(i * 4 + j)] - res;
           }
           t.emplace_back(std::size_t(i), d);
         }
         return OpCase{[t, beta](const V& v) { return smooth_l1_loss(v[0], t, beta, 1.0); }, {x}};
       }},
      {"mask_bce",
       [](auto& rng) {
         const int m = pick(rng, 1, 2), k = pick(rng, 1, 3);
         std::vector<MaskGrid> grids(static_cast<std::size_t>(m));
         std::vector<int> cls;
         for (auto& g : grids)
           for (auto& b : g) b = static_cast<std::uint8_t>(pick(rng, 0, 1));
         for (int i = 0; i < m; ++i) cls.push_back(pick(rng, 0, k - 1));
         return OpCase{[grids, cls](const V& v) { return mask_bce_loss(v[0], grids, cls); },
                       {uniform({m, k, 32, 32}, rng, -3, 3)}};
       }},
  };
  return ops;
}

inline OpReport run_op_gradcheck(const OpSpec& op, int trials, double tol, std::uint64_t seed = 1,
                                 double eps = 1e-6) {
  std::uint64_t h = seed;
  for (unsigned char ch : op.name) h = h * 131 + ch;
  std::mt19937_64 rng(h);
  OpReport r{op.name, trials, 0, true};
  for (int t = 0; t < trials; ++t) {
    const OpCase c = op.make(rng);
    const auto rep = finite_diff_check(c.fn, c.inputs, eps, tol);
    r.max_rel_error = std::max(r.max_rel_error, rep.max_rel_error);
  }
  r.passed = r.max_rel_error < tol;
  return r;
}

/// A network small enough for exhaustive finite differences: 32x32 input,
/// 4-wide pyramid, one tower conv per head, 2 anchors per pixel, K = 3.
inline ModelConfig micro_model_config() {
  ModelConfig c;
  c.image_size = 32;
  c.backbone.widths = {4, 4, 4};
  c.backbone.pyramid_width = 4;
  c.head.depth = 1;
  c.head.classes = 3;
  c.anchors.base_sizes = {8, 16, 32};
  c.anchors.scales = {1.0, 1.5};
  c.anchors.ratios = {1.0};
  c.fusion = FusionConfig{FusionKind::dilated, 2, 2, 2};
  c.decoder.deconv_widths = {3, 3, 2};
  c.decoder.up_widths = {2, 2};
  normalize(c);
  return c;
}

struct NetworkCheck {
  GradCheckReport report;
  std::size_t parameters = 0;
  std::size_t positives = 0;
  std::size_t mask_samples = 0;
};

/// d(total loss)/d(every parameter) of the micro network on one synthetic
/// image with two instances, against central differences.
inline NetworkCheck network_gradcheck(std::uint64_t seed, double eps, double tol) {
  SprNet<double> net(micro_model_config(), seed);
  std::mt19937_64 rng(seed + 1);
  // non-zero biases keep relu inputs off the kink at exactly 0
  for (auto& e : net.store().entries()) {
    if (!e.name.ends_with(".bias") || e.name == "head.cls.out.bias") continue;
    for (double& v : e.value.data()) v = detail::uniform({1, 1, 1, 1}, rng, 0.05, 0.3).item();
  }
  Image img(32, 32, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(detail::pick(rng, 0, 255));
  std::vector<InstanceAnnotation> gts;
  for (const auto& [cls, b] : {std::pair{0, Box{2, 2, 10, 10}}, std::pair{1, Box{11, 9, 27, 25}}}) {
    InstanceAnnotation a{cls, b, BinaryMask(32, 32)};
    for (int y = int(b.y1); y < int(b.y2); ++y)
      for (int x = int(b.x1); x < int(b.x2); ++x)
        if ((x - b.cx() + 0.5) * (x - b.cx() + 0.5) + (y - b.cy() + 0.5) * (y - b.cy() + 0.5) <= b.width() * b.width() / 4)
          a.mask.at(x, y) = 1;
    a.box = *a.mask.tight_box();
    gts.push_back(std::move(a));
  }
  TrainConfig tc;
  tc.mask_sampling.iou_thresh = 0.5;
  const auto sample = prepare_sample<double>(net.anchors(), img, gts, tc);
  NetworkCheck out;
  out.positives = sample.labels.positives;
  out.mask_samples = sample.masks.entries.size();
  std::vector<Tensor<double>> params;
  for (auto& e : net.store().entries()) params.push_back(e.value);
  out.parameters = net.store().parameter_count();
  out.report = finite_diff_check(
      [&](const std::vector<Tensor<double>>&) { return image_loss(net, sample, tc.loss, nullptr); }, params, eps, tol);
  return out;
}

}  // namespace sprnet
