// Named parameters, Adam moments, and the optimizer step.

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "sprnet/log.hpp"
#include "sprnet/tensor.hpp"

namespace sprnet {

template <class T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  long step = 0;
};

template <class T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  AdamState<T> adam;
};

/// Insertion-ordered map from parameter path to leaf tensor.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name) != 0) throw Error("ParamStore: duplicate parameter '" + name + "'");
    value.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    ParamEntry<T> e{name, std::move(value), {}};
    e.adam.m.assign(e.value.numel(), T(0));
    e.adam.v.assign(e.value.numel(), T(0));
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
    return entries_[it->second].value;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
    return entries_[it->second].value;
  }

  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.value.numel();
    return total;
  }

  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool warn_missing_grad = true;
};

struct AdamReport {
  std::size_t updated = 0;
  std::vector<std::string> skipped;
};

/// One bias-corrected Adam update of every parameter that holds a gradient.
template <class T>
AdamReport adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
  AdamReport report;
  for (auto& e : store.entries()) {
    if (!e.value.has_grad()) {
      report.skipped.push_back(e.name);
      if (cfg.warn_missing_grad) log_warning("adam_step: parameter '" + e.name + "' has no gradient, skipped");
      continue;
    }
    auto& st = e.adam;
    ++st.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    auto w = e.value.data();
    auto g = e.value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = static_cast<T>(cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i]);
      st.v[i] = static_cast<T>(cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
      const double mhat = st.m[i] / c1;
      const double vhat = st.v[i] / c2;
      w[i] = static_cast<T>(w[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    ++report.updated;
  }
  return report;
}

template <class T>
double global_grad_norm(const ParamStore<T>& store) {
  double sq = 0.0;
  for (const auto& e : store.entries()) {
    if (!e.value.has_grad()) continue;
    for (T g : e.value.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

/// Rescales all gradients so their global 2-norm is at most max_norm.
/// Returns the norm before clipping.
template <class T>
double clip_gradients(ParamStore<T>& store, double max_norm = 1e-3) {
  const double norm = global_grad_norm(store);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& e : store.entries()) {
      if (!e.value.has_grad()) continue;
      for (T& g : e.value.grad()) g = static_cast<T>(g * factor);
    }
  }
  return norm;
}

/// He-normal initialized weight: std = sqrt(2 / fan_in).
template <class T>
Tensor<T> he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  Tensor<T> t(shape);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Tensor<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace sprnet
