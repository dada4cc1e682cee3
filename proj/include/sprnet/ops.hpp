// Elementwise, reduction, layout and resampling ops with their vjps.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sprnet/tensor.hpp"

namespace sprnet {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw Error(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_result<T>(
      a.shape(), std::move(out), {&a, &b},
      [](detail::Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
          if (auto* g = detail::parent_grad(self, k)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
          }
        }
      },
      "add");
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result<T>(
      a.shape(), std::move(out), {&a, &b},
      [](detail::Node<T>& self) {
        const auto& av = detail::parent_value(self, 0);
        const auto& bv = detail::parent_value(self, 1);
        if (auto* g = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        }
        if (auto* g = detail::parent_grad(self, 1)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
        }
      },
      "mul");
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return detail::make_result<T>(
      a.shape(), std::move(out), {&a},
      [factor](detail::Node<T>& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * self.grad[i];
        }
      },
      "scale");
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(av[i]);
  return detail::make_result<T>(
      a.shape(), std::move(out), {&a},
      [](detail::Node<T>& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) {
            const T s = self.value[i];
            (*g)[i] += self.grad[i] * s * (T(1) - s);
          }
        }
      },
      "sigmoid");
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
  return detail::make_result<T>(
      a.shape(), std::move(out), {&a},
      [](detail::Node<T>& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
          const auto& av = detail::parent_value(self, 0);
          for (std::size_t i = 0; i < g->size(); ++i) {
            if (av[i] > T(0)) (*g)[i] += self.grad[i];
          }
        }
      },
      "relu");
}

/// Sum of all elements as a [1,1,1,1] tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return detail::make_result<T>(
      Shape{1, 1, 1, 1}, std::vector<T>{total}, {&a},
      [](detail::Node<T>& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
          for (auto& v : *g) v += self.grad[0];
        }
      },
      "sum");
}

/// Stop-gradient: same values, no path back to the input.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  return a.detach();
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw Error("concat_channels: spatial mismatch " + first.str() + " vs " + s.str());
    }
    channels += s.c;
  }
  const Shape out_shape{first.n, channels, first.h, first.w};
  const std::size_t plane = first.plane();
  std::vector<T> out(out_shape.numel());
  std::vector<int> offsets;
  int offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const int pc = p.shape().c;
    auto src = p.data();
    for (int n = 0; n < first.n; ++n) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(n * pc * plane), pc * plane,
                  out.begin() + static_cast<std::ptrdiff_t>((n * channels + offset) * plane));
    }
    offset += pc;
  }
  return detail::make_result<T>(
      out_shape, std::move(out), parts,
      [offsets, channels, plane](detail::Node<T>& self) {
        const int batch = self.shape.n;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          auto* g = detail::parent_grad(self, k);
          if (g == nullptr) continue;
          const int pc = self.parents[k]->shape.c;
          for (int n = 0; n < batch; ++n) {
            const T* src = self.grad.data() + (n * channels + offsets[k]) * plane;
            T* dst = g->data() + n * pc * plane;
            for (std::size_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
          }
        }
      },
      "concat_channels");
}

/// Stacks tensors of equal C, H, W along the batch axis.
template <class T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw Error("concat_batch: no inputs");
  if (parts.size() == 1) return parts.front();
  const Shape first = parts.front().shape();
  int rows = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) {
      throw Error("concat_batch: shape mismatch " + first.str() + " vs " + s.str());
    }
    rows += s.n;
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return detail::make_result<T>(
      Shape{rows, first.c, first.h, first.w}, std::move(out), parts,
      [](detail::Node<T>& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          const std::size_t len = self.parents[k]->value.size();
          if (auto* g = detail::parent_grad(self, k)) {
            for (std::size_t i = 0; i < len; ++i) (*g)[i] += self.grad[offset + i];
          }
          offset += len;
        }
      },
      "concat_batch");
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, int begin, int count) {
  const Shape s = a.shape();
  if (begin < 0 || count <= 0 || begin + count > s.c) {
    throw Error("slice_channels: range [" + std::to_string(begin) + ", " +
                std::to_string(begin + count) + ") outside " + s.str());
  }
  const Shape out_shape{s.n, count, s.h, s.w};
  const std::size_t plane = s.plane();
  std::vector<T> out(out_shape.numel());
  auto src = a.data();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((n * s.c + begin) * plane),
                count * plane, out.begin() + static_cast<std::ptrdiff_t>(n * count * plane));
  }
  return detail::make_result<T>(
      out_shape, std::move(out), {&a},
      [begin, count, plane, channels = s.c](detail::Node<T>& self) {
        auto* g = detail::parent_grad(self, 0);
        if (g == nullptr) return;
        for (int n = 0; n < self.shape.n; ++n) {
          const T* src = self.grad.data() + n * count * plane;
          T* dst = g->data() + (n * channels + begin) * plane;
          for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
        }
      },
      "slice_channels");
}

/// Replicates every element factor x factor times.
template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& a, int factor) {
  if (factor < 1) throw Error("upsample_nearest: factor must be >= 1");
  const Shape s = a.shape();
  const Shape out_shape{s.n, s.c, s.h * factor, s.w * factor};
  std::vector<T> out(out_shape.numel());
  auto src = a.data();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (int y = 0; y < out_shape.h; ++y) {
      const T* row = src.data() + (p * s.h + y / factor) * s.w;
      T* dst = out.data() + (p * out_shape.h + y) * out_shape.w;
      for (int x = 0; x < out_shape.w; ++x) dst[x] = row[x / factor];
    }
  }
  return detail::make_result<T>(
      out_shape, std::move(out), {&a},
      [factor, s, planes](detail::Node<T>& self) {
        auto* g = detail::parent_grad(self, 0);
        if (g == nullptr) return;
        const int oh = s.h * factor;
        const int ow = s.w * factor;
        for (std::size_t p = 0; p < planes; ++p) {
          for (int y = 0; y < oh; ++y) {
            const T* src = self.grad.data() + (p * oh + y) * ow;
            T* row = g->data() + (p * s.h + y / factor) * s.w;
            for (int x = 0; x < ow; ++x) row[x / factor] += src[x];
          }
        }
      },
      "upsample_nearest");
}

template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& a) {
  return upsample_nearest(a, 2);
}

namespace detail {

// Half-pixel-center sampling taps for one axis: src = (dst + 0.5) * in / out - 0.5,
// clamped to the valid range.
struct LinearTap {
  int i0;
  int i1;
  double frac;
};

inline std::vector<LinearTap> bilinear_taps(int in, int out) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize with align-corners-false (half-pixel) sampling.
template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& a, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw Error("upsample_bilinear: output size must be >= 1");
  const Shape s = a.shape();
  const Shape out_shape{s.n, s.c, out_h, out_w};
  const auto ty = detail::bilinear_taps(s.h, out_h);
  const auto tx = detail::bilinear_taps(s.w, out_w);
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  std::vector<T> out(out_shape.numel());
  auto src = a.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = src.data() + p * s.plane();
    for (int y = 0; y < out_h; ++y) {
      const auto& yt = ty[y];
      for (int x = 0; x < out_w; ++x) {
        const auto& xt = tx[x];
        const T fy = static_cast<T>(yt.frac);
        const T fx = static_cast<T>(xt.frac);
        const T top = in[yt.i0 * s.w + xt.i0] * (T(1) - fx) + in[yt.i0 * s.w + xt.i1] * fx;
        const T bot = in[yt.i1 * s.w + xt.i0] * (T(1) - fx) + in[yt.i1 * s.w + xt.i1] * fx;
        out[(p * out_h + y) * out_w + x] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return detail::make_result<T>(
      out_shape, std::move(out), {&a},
      [s, ty, tx, planes, out_h, out_w](detail::Node<T>& self) {
        auto* g = detail::parent_grad(self, 0);
        if (g == nullptr) return;
        for (std::size_t p = 0; p < planes; ++p) {
          T* in = g->data() + p * s.plane();
          for (int y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ty[y].frac);
            for (int x = 0; x < out_w; ++x) {
              const T fx = static_cast<T>(tx[x].frac);
              const T go = self.grad[(p * out_h + y) * out_w + x];
              in[ty[y].i0 * s.w + tx[x].i0] += go * (T(1) - fy) * (T(1) - fx);
              in[ty[y].i0 * s.w + tx[x].i1] += go * (T(1) - fy) * fx;
              in[ty[y].i1 * s.w + tx[x].i0] += go * fy * (T(1) - fx);
              in[ty[y].i1 * s.w + tx[x].i1] += go * fy * fx;
            }
          }
        }
      },
      "upsample_bilinear");
}

struct PixelIndex {
  int n = 0;
  int y = 0;
  int x = 0;
};

/// Gathers full channel columns at the given locations into [M, C, 1, 1].
template <class T>
Tensor<T> gather_pixels(const Tensor<T>& a, const std::vector<PixelIndex>& at) {
  const Shape s = a.shape();
  if (at.empty()) throw Error("gather_pixels: no locations");
  for (const auto& p : at) {
    if (p.n < 0 || p.n >= s.n || p.y < 0 || p.y >= s.h || p.x < 0 || p.x >= s.w) {
      throw Error("gather_pixels: location (" + std::to_string(p.n) + "," +
                  std::to_string(p.y) + "," + std::to_string(p.x) + ") outside " + s.str());
    }
  }
  const Shape out_shape{static_cast<int>(at.size()), s.c, 1, 1};
  std::vector<T> out(out_shape.numel());
  for (std::size_t m = 0; m < at.size(); ++m) {
    for (int c = 0; c < s.c; ++c) out[m * s.c + c] = a.at(at[m].n, c, at[m].y, at[m].x);
  }
  return detail::make_result<T>(
      out_shape, std::move(out), {&a},
      [at, s](detail::Node<T>& self) {
        auto* g = detail::parent_grad(self, 0);
        if (g == nullptr) return;
        for (std::size_t m = 0; m < at.size(); ++m) {
          for (int c = 0; c < s.c; ++c) {
            const std::size_t idx =
                ((static_cast<std::size_t>(at[m].n) * s.c + c) * s.h + at[m].y) * s.w + at[m].x;
            (*g)[idx] += self.grad[m * s.c + c];
          }
        }
      },
      "gather_pixels");
}

/// For every batch row m, keeps channel channel_of[m]: [M,K,H,W] -> [M,1,H,W].
template <class T>
Tensor<T> gather_channel_per_row(const Tensor<T>& a, const std::vector<int>& channel_of) {
  const Shape s = a.shape();
  if (static_cast<int>(channel_of.size()) != s.n) {
    throw Error("gather_channel_per_row: " + std::to_string(channel_of.size()) +
                " channel ids for batch of " + std::to_string(s.n));
  }
  for (int c : channel_of) {
    if (c < 0 || c >= s.c) {
      throw Error("gather_channel_per_row: channel " + std::to_string(c) + " outside [0, " +
                  std::to_string(s.c) + ")");
    }
  }
  const Shape out_shape{s.n, 1, s.h, s.w};
  const std::size_t plane = s.plane();
  std::vector<T> out(out_shape.numel());
  auto src = a.data();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((n * s.c + channel_of[n]) * plane),
                plane, out.begin() + static_cast<std::ptrdiff_t>(n * plane));
  }
  return detail::make_result<T>(
      out_shape, std::move(out), {&a},
      [channel_of, s, plane](detail::Node<T>& self) {
        auto* g = detail::parent_grad(self, 0);
        if (g == nullptr) return;
        for (int n = 0; n < s.n; ++n) {
          T* dst = g->data() + (n * s.c + channel_of[n]) * plane;
          const T* src = self.grad.data() + n * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
      },
      "gather_channel_per_row");
}

/// Reorders per-level dense head outputs [N, A*D, h, w] of batch row `batch`
/// into one anchor-major matrix [sum(h*w*A), D, 1, 1]. Rows are ordered by
/// (level, y, x, anchor); channel a*D + d of a level holds column d of anchor a.
template <class T>
Tensor<T> anchor_major(const std::vector<Tensor<T>>& levels, int per_anchor, int batch = 0) {
  if (levels.empty()) throw Error("anchor_major: no levels");
  int rows = 0;
  for (const auto& l : levels) {
    const Shape s = l.shape();
    if (s.c % per_anchor != 0) {
      throw Error("anchor_major: channel count " + std::to_string(s.c) +
                  " not divisible by " + std::to_string(per_anchor));
    }
    if (batch < 0 || batch >= s.n) throw Error("anchor_major: batch index out of range");
    rows += s.h * s.w * (s.c / per_anchor);
  }
  const Shape out_shape{rows, per_anchor, 1, 1};
  std::vector<T> out(out_shape.numel());
  std::size_t row = 0;
  for (const auto& l : levels) {
    const Shape s = l.shape();
    const int anchors = s.c / per_anchor;
    auto src = l.data();
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        for (int a = 0; a < anchors; ++a, ++row) {
          for (int d = 0; d < per_anchor; ++d) {
            out[row * per_anchor + d] = src[l.index(batch, a * per_anchor + d, y, x)];
          }
        }
      }
    }
  }
  return detail::make_result<T>(
      out_shape, std::move(out), levels,
      [per_anchor, batch](detail::Node<T>& self) {
        std::size_t row = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          const Shape s = self.parents[k]->shape;
          const int anchors = s.c / per_anchor;
          auto* g = detail::parent_grad(self, k);
          if (g == nullptr) {
            row += static_cast<std::size_t>(s.h) * s.w * anchors;
            continue;
          }
          for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
              for (int a = 0; a < anchors; ++a, ++row) {
                for (int d = 0; d < per_anchor; ++d) {
                  const std::size_t idx =
                      ((static_cast<std::size_t>(batch) * s.c + a * per_anchor + d) * s.h + y) *
                          s.w + x;
                  (*g)[idx] += self.grad[row * per_anchor + d];
                }
              }
            }
          }
        }
      },
      "anchor_major");
}

}  // namespace sprnet
