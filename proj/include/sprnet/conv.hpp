// Convolution family: dense, transposed, depthwise and separable.
//
// Dense and transposed convolutions lower to im2col / col2im plus one GEMM
// per batch row (Eigen). Weight layouts:
//   conv2d            [C_out, C_in, k, k]
//   conv2d_transpose  [C_in, C_out, k, k]  (the same tensor a matching conv2d
//                                            from C_out to C_in would use)
//   depthwise         [C, 1, k, k]

#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "sprnet/tensor.hpp"

namespace sprnet {

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

template <class T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;  // may be undefined
  ConvSpec spec;
};

/// floor((in + 2 pad - dilation (k - 1) - 1) / stride) + 1, or <= 0 when the
/// dilated kernel does not fit.
inline int conv_output_size(int in, int k, ConvSpec s) {
  const int span = in + 2 * s.padding - s.dilation * (k - 1) - 1;
  if (span < 0) return 0;
  return span / s.stride + 1;
}

inline int conv_transpose_output_size(int in, int k, ConvSpec s) {
  return (in - 1) * s.stride - 2 * s.padding + s.dilation * (k - 1) + 1;
}

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int channels;
  int in_h, in_w;
  int k;
  ConvSpec spec;
  int out_h, out_w;

  int rows() const { return channels * k * k; }
  int cols() const { return out_h * out_w; }
  bool pointwise() const {
    return k == 1 && spec.stride == 1 && spec.padding == 0 && in_h == out_h && in_w == out_w;
  }
};

// col[(c*k + ky)*k + kx][oy*out_w + ox] = in[c][oy*s - p + ky*d][ox*s - p + kx*d] (0 outside)
template <class T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const int s = g.spec.stride;
  const int p = g.spec.padding;
  const int d = g.spec.dilation;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
        const int off_x = kx * d - p;
        // valid ox range: 0 <= ox*s + off_x < in_w
        int ox_lo = off_x >= 0 ? 0 : (-off_x + s - 1) / s;
        int ox_hi = g.in_w - off_x <= 0 ? 0 : (g.in_w - off_x + s - 1) / s;
        if (ox_hi > g.out_w) ox_hi = g.out_w;
        if (ox_lo > ox_hi) ox_lo = ox_hi;
        for (int oy = 0; oy < g.out_h; ++oy) {
          T* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          const int iy = oy * s - p + ky * d;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.in_w;
          std::fill(dst, dst + ox_lo, T(0));
          if (s == 1) {
            std::copy(src + ox_lo + off_x, src + ox_hi + off_x, dst + ox_lo);
          } else {
            for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = src[ox * s + off_x];
          }
          std::fill(dst + ox_hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds col back onto the input grid.
template <class T>
void col2im(const T* col, const ConvGeometry& g, T* in) {
  const int s = g.spec.stride;
  const int p = g.spec.padding;
  const int d = g.spec.dilation;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = in + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
        const int off_x = kx * d - p;
        int ox_lo = off_x >= 0 ? 0 : (-off_x + s - 1) / s;
        int ox_hi = g.in_w - off_x <= 0 ? 0 : (g.in_w - off_x + s - 1) / s;
        if (ox_hi > g.out_w) ox_hi = g.out_w;
        if (ox_lo > ox_hi) ox_lo = ox_hi;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * s - p + ky * d;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.out_w;
          T* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox * s + off_x] += src[ox];
        }
      }
    }
  }
}

inline void check_spec(ConvSpec s, const char* op) {
  if (s.stride < 1 || s.dilation < 1 || s.padding < 0) {
    throw Error(std::string(op) + ": stride and dilation must be >= 1 and padding >= 0");
  }
}

template <class T>
void check_bias(const Tensor<T>& bias, int channels, const char* op) {
  if (!bias.defined()) return;
  if (bias.numel() != static_cast<std::size_t>(channels)) {
    throw Error(std::string(op) + ": bias " + bias.shape().str() + " does not match " +
                std::to_string(channels) + " output channels");
  }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvSpec spec) {
  detail::check_spec(spec, "conv2d");
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw Error("conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  detail::check_bias(bias, ws.n, "conv2d");
  const int k = ws.h;
  const int out_h = conv_output_size(xs.h, k, spec);
  const int out_w = conv_output_size(xs.w, k, spec);
  if (out_h <= 0 || out_w <= 0) {
    throw Error("conv2d: dilated kernel of weight " + ws.str() + " does not fit input " +
                xs.str());
  }
  const detail::ConvGeometry geo{xs.c, xs.h, xs.w, k, spec, out_h, out_w};
  const Shape out_shape{xs.n, ws.n, out_h, out_w};
  std::vector<T> out(out_shape.numel());
  std::vector<T> col(geo.pointwise() ? 0 : static_cast<std::size_t>(geo.rows()) * geo.cols());
  detail::ConstMatMap<T> wmat(weight.data().data(), ws.n, geo.rows());
  for (int n = 0; n < xs.n; ++n) {
    const T* x = input.data().data() + static_cast<std::size_t>(n) * xs.c * xs.plane();
    const T* colp = x;
    if (!geo.pointwise()) {
      detail::im2col(x, geo, col.data());
      colp = col.data();
    }
    detail::MatMap<T> omat(out.data() + static_cast<std::size_t>(n) * ws.n * geo.cols(), ws.n,
                           geo.cols());
    omat.noalias() = wmat * detail::ConstMatMap<T>(colp, geo.rows(), geo.cols());
    if (bias.defined()) omat.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
                                              bias.data().data(), ws.n);
  }
  return detail::make_result<T>(
      out_shape, std::move(out), {&input, &weight, &bias},
      [geo, xs, ws](detail::Node<T>& self) {
        auto* gx = detail::parent_grad(self, 0);
        auto* gw = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        const auto& x = detail::parent_value(self, 0);
        const auto& w = detail::parent_value(self, 1);
        std::vector<T> col(static_cast<std::size_t>(geo.rows()) * geo.cols());
        detail::ConstMatMap<T> wmat(w.data(), ws.n, geo.rows());
        for (int n = 0; n < xs.n; ++n) {
          detail::ConstMatMap<T> gout(self.grad.data() + static_cast<std::size_t>(n) * ws.n *
                                                             geo.cols(),
                                      ws.n, geo.cols());
          const T* xn = x.data() + static_cast<std::size_t>(n) * xs.c * xs.plane();
          if (gw != nullptr) {
            detail::MatMap<T> gwmat(gw->data(), ws.n, geo.rows());
            if (geo.pointwise()) {
              gwmat.noalias() += gout * detail::ConstMatMap<T>(xn, geo.rows(), geo.cols()).transpose();
            } else {
              detail::im2col(xn, geo, col.data());
              gwmat.noalias() +=
                  gout * detail::ConstMatMap<T>(col.data(), geo.rows(), geo.cols()).transpose();
            }
          }
          if (gb != nullptr) {
            // plain loop: Eigen's vectorised rowwise sum peels by buffer alignment,
            // which makes float results depend on where the heap put the grad
            for (int o = 0; o < ws.n; ++o) {
              T acc = 0;
              for (int j = 0; j < geo.cols(); ++j) acc += gout(o, j);
              (*gb)[o] += acc;
            }
          }
          if (gx != nullptr) {
            T* gxn = gx->data() + static_cast<std::size_t>(n) * xs.c * xs.plane();
            if (geo.pointwise()) {
              detail::MatMap<T>(gxn, geo.rows(), geo.cols()).noalias() += wmat.transpose() * gout;
            } else {
              detail::MatMap<T>(col.data(), geo.rows(), geo.cols()).noalias() =
                  wmat.transpose() * gout;
              detail::col2im(col.data(), geo, gxn);
            }
          }
        }
      },
      "conv2d");
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& p) {
  return conv2d(input, p.weight, p.bias, p.spec);
}

template <class T>
Tensor<T> conv2d_transpose(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvSpec spec) {
  detail::check_spec(spec, "conv2d_transpose");
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (ws.n != xs.c || ws.h != ws.w) {
    throw Error("conv2d_transpose: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  const int k = ws.h;
  if (spec.padding >= k) throw Error("conv2d_transpose: padding must be smaller than kernel");
  detail::check_bias(bias, ws.c, "conv2d_transpose");
  const int out_h = conv_transpose_output_size(xs.h, k, spec);
  const int out_w = conv_transpose_output_size(xs.w, k, spec);
  if (out_h <= 0 || out_w <= 0) {
    throw Error("conv2d_transpose: non-positive output size for input " + xs.str() +
                " and weight " + ws.str());
  }
  // Geometry of the matching forward conv that maps the output grid to the input grid.
  const detail::ConvGeometry geo{ws.c, out_h, out_w, k, spec, xs.h, xs.w};
  const Shape out_shape{xs.n, ws.c, out_h, out_w};
  std::vector<T> out(out_shape.numel(), T(0));
  std::vector<T> col(static_cast<std::size_t>(geo.rows()) * geo.cols());
  detail::ConstMatMap<T> wmat(weight.data().data(), ws.n, geo.rows());
  for (int n = 0; n < xs.n; ++n) {
    detail::ConstMatMap<T> xmat(input.data().data() + static_cast<std::size_t>(n) * xs.c * xs.plane(),
                                xs.c, geo.cols());
    detail::MatMap<T>(col.data(), geo.rows(), geo.cols()).noalias() = wmat.transpose() * xmat;
    T* on = out.data() + static_cast<std::size_t>(n) * out_shape.c * out_shape.plane();
    detail::col2im(col.data(), geo, on);
    if (bias.defined()) {
      for (int c = 0; c < ws.c; ++c) {
        T* plane = on + static_cast<std::size_t>(c) * out_shape.plane();
        for (std::size_t i = 0; i < out_shape.plane(); ++i) plane[i] += bias.data()[c];
      }
    }
  }
  return detail::make_result<T>(
      out_shape, std::move(out), {&input, &weight, &bias},
      [geo, xs, ws, out_shape](detail::Node<T>& self) {
        auto* gx = detail::parent_grad(self, 0);
        auto* gw = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        const auto& x = detail::parent_value(self, 0);
        const auto& w = detail::parent_value(self, 1);
        std::vector<T> col(static_cast<std::size_t>(geo.rows()) * geo.cols());
        detail::ConstMatMap<T> wmat(w.data(), ws.n, geo.rows());
        for (int n = 0; n < xs.n; ++n) {
          const T* gy = self.grad.data() + static_cast<std::size_t>(n) * out_shape.c * out_shape.plane();
          detail::im2col(gy, geo, col.data());
          detail::ConstMatMap<T> cmat(col.data(), geo.rows(), geo.cols());
          if (gx != nullptr) {
            detail::MatMap<T>(gx->data() + static_cast<std::size_t>(n) * xs.c * xs.plane(), xs.c,
                              geo.cols())
                .noalias() += wmat * cmat;
          }
          if (gw != nullptr) {
            detail::ConstMatMap<T> xmat(x.data() + static_cast<std::size_t>(n) * xs.c * xs.plane(),
                                        xs.c, geo.cols());
            detail::MatMap<T>(gw->data(), ws.n, geo.rows()).noalias() += xmat * cmat.transpose();
          }
          if (gb != nullptr) {
            for (int c = 0; c < ws.c; ++c) {
              const T* plane = gy + static_cast<std::size_t>(c) * out_shape.plane();
              T acc = T(0);
              for (std::size_t i = 0; i < out_shape.plane(); ++i) acc += plane[i];
              (*gb)[c] += acc;
            }
          }
        }
      },
      "conv2d_transpose");
}

template <class T>
Tensor<T> conv2d_transpose(const Tensor<T>& input, const ConvParams<T>& p) {
  return conv2d_transpose(input, p.weight, p.bias, p.spec);
}

/// One k x k filter per input channel.
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvSpec spec) {
  detail::check_spec(spec, "depthwise_conv2d");
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (ws.c != 1 || ws.n != xs.c) {
    throw Error("depthwise_conv2d: weight " + ws.str() + " must hold exactly one filter per " +
                "channel of input " + xs.str() + " (channel multiplier 1)");
  }
  if (ws.h != ws.w) throw Error("depthwise_conv2d: kernel must be square, got " + ws.str());
  detail::check_bias(bias, xs.c, "depthwise_conv2d");
  const int k = ws.h;
  const int out_h = conv_output_size(xs.h, k, spec);
  const int out_w = conv_output_size(xs.w, k, spec);
  if (out_h <= 0 || out_w <= 0) {
    throw Error("depthwise_conv2d: kernel " + ws.str() + " does not fit input " + xs.str());
  }
  const Shape out_shape{xs.n, xs.c, out_h, out_w};
  std::vector<T> out(out_shape.numel());
  auto x = input.data();
  auto w = weight.data();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const T* in = x.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
      const T* kern = w.data() + static_cast<std::size_t>(c) * k * k;
      T* o = out.data() + (static_cast<std::size_t>(n) * xs.c + c) * out_shape.plane();
      const T b = bias.defined() ? bias.data()[c] : T(0);
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          T acc = b;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
            if (iy < 0 || iy >= xs.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
              if (ix < 0 || ix >= xs.w) continue;
              acc += kern[ky * k + kx] * in[iy * xs.w + ix];
            }
          }
          o[oy * out_w + ox] = acc;
        }
      }
    }
  }
  return detail::make_result<T>(
      out_shape, std::move(out), {&input, &weight, &bias},
      [xs, k, spec, out_shape](detail::Node<T>& self) {
        auto* gx = detail::parent_grad(self, 0);
        auto* gw = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        const auto& x = detail::parent_value(self, 0);
        const auto& w = detail::parent_value(self, 1);
        for (int n = 0; n < xs.n; ++n) {
          for (int c = 0; c < xs.c; ++c) {
            const std::size_t in_off = (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
            const T* go = self.grad.data() +
                          (static_cast<std::size_t>(n) * xs.c + c) * out_shape.plane();
            for (int oy = 0; oy < out_shape.h; ++oy) {
              for (int ox = 0; ox < out_shape.w; ++ox) {
                const T g = go[oy * out_shape.w + ox];
                if (gb != nullptr) (*gb)[c] += g;
                for (int ky = 0; ky < k; ++ky) {
                  const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
                  if (iy < 0 || iy >= xs.h) continue;
                  for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
                    if (ix < 0 || ix >= xs.w) continue;
                    const std::size_t xi = in_off + static_cast<std::size_t>(iy) * xs.w + ix;
                    const std::size_t wi = static_cast<std::size_t>(c) * k * k + ky * k + kx;
                    if (gw != nullptr) (*gw)[wi] += g * x[xi];
                    if (gx != nullptr) (*gx)[xi] += g * w[wi];
                  }
                }
              }
            }
          }
        }
      },
      "depthwise_conv2d");
}

/// Depthwise k x k followed by a pointwise 1 x 1 convolution.
template <class T>
Tensor<T> separable_conv2d(const Tensor<T>& input, const ConvParams<T>& depthwise,
                           const ConvParams<T>& pointwise) {
  const Shape ps = pointwise.weight.shape();
  if (ps.h != 1 || ps.w != 1) {
    throw Error("separable_conv2d: pointwise weight must be 1x1, got " + ps.str());
  }
  const auto mid = depthwise_conv2d(input, depthwise.weight, depthwise.bias, depthwise.spec);
  return conv2d(mid, pointwise.weight, pointwise.bias, pointwise.spec);
}

}  // namespace sprnet
