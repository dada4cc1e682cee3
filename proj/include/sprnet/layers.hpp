// Parameter registration helpers shared by the network modules.

#pragma once

#include <cmath>
#include <random>
#include <string>

#include "sprnet/conv.hpp"
#include "sprnet/param_store.hpp"

namespace sprnet {

enum class Init {
  he,      // relu-followed layers: std = sqrt(2 / fan_in)
  lecun,   // linear layers: std = sqrt(1 / fan_in)
  small,   // output layers: std = 0.01
  zero,
};

/// Registers "<name>.weight" [out, in, k, k] and "<name>.bias" [out].
template <class T>
ConvParams<T> make_conv(ParamStore<T>& store, const std::string& name, int in, int out, int k,
                        ConvSpec spec, std::mt19937_64& rng, Init init = Init::he, double bias = 0.0) {
  const Shape ws{out, in, k, k};
  const int fan_in = in * k * k;
  Tensor<T> w;
  switch (init) {
    case Init::he: w = he_normal<T>(ws, fan_in, rng); break;
    case Init::lecun: w = normal_init<T>(ws, std::sqrt(1.0 / fan_in), rng); break;
    case Init::small: w = normal_init<T>(ws, 0.01, rng); break;
    case Init::zero: w = Tensor<T>(ws); break;
  }
  ConvParams<T> p;
  p.weight = store.add(name + ".weight", std::move(w));
  p.bias = store.add(name + ".bias", Tensor<T>(Shape{out, 1, 1, 1}, static_cast<T>(bias)));
  p.spec = spec;
  return p;
}

/// Transposed conv weight [in, out, k, k]; each output pixel of a stride-k,
/// kernel-k deconvolution sees exactly `in` inputs.
template <class T>
ConvParams<T> make_deconv(ParamStore<T>& store, const std::string& name, int in, int out, int k,
                          ConvSpec spec, std::mt19937_64& rng) {
  ConvParams<T> p;
  p.weight = store.add(name + ".weight", normal_init<T>(Shape{in, out, k, k}, std::sqrt(1.0 / in), rng));
  p.bias = store.add(name + ".bias", Tensor<T>(Shape{out, 1, 1, 1}));
  p.spec = spec;
  return p;
}

/// Depthwise weight [channels, 1, k, k].
template <class T>
ConvParams<T> make_depthwise(ParamStore<T>& store, const std::string& name, int channels, int k,
                             ConvSpec spec, std::mt19937_64& rng) {
  ConvParams<T> p;
  p.weight = store.add(name + ".weight", he_normal<T>(Shape{channels, 1, k, k}, k * k, rng));
  p.bias = store.add(name + ".bias", Tensor<T>(Shape{channels, 1, 1, 1}));
  p.spec = spec;
  return p;
}

template <class T>
std::size_t param_count(const ConvParams<T>& p) {
  return p.weight.numel() + (p.bias.defined() ? p.bias.numel() : 0);
}

}  // namespace sprnet
