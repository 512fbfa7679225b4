#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>

#include "cnnzoo/errors.hpp"
#include "cnnzoo/param_store.hpp"

namespace cnnzoo {

enum class OptimizerKind { sgd, adam };

struct OptimState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;

  struct Slots {
    std::vector<double> m;  // sgd velocity / adam first moment
    std::vector<double> v;  // adam second moment
  };
  std::unordered_map<std::string, Slots> slots;

  static OptimState sgd(double lr, double momentum = 0.9) {
    OptimState s;
    s.kind = OptimizerKind::sgd;
    s.learning_rate = lr;
    s.momentum = momentum;
    return s;
  }
  static OptimState adam(double lr = 1e-3) {
    OptimState s;
    s.kind = OptimizerKind::adam;
    s.learning_rate = lr;
    return s;
  }
};

/// One update of every trainable parameter. Gradients must exist for exactly
/// the trainable entries; frozen parameters and buffers are never touched.
template <typename T>
void optimizer_step(ParamStore<T>& params, const Gradients<T>& grads, OptimState& state) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name) || !params.entry(name).is_trainable_param()) {
      throw StateError("optimizer: gradient for non-trainable or unknown entry '" + name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto& e : params.entries()) {
    if (!e.is_trainable_param()) continue;
    if (!grads.contains(e.name)) throw StateError("optimizer: missing gradient for '" + e.name + "'");
    const Tensor<T>& g = grads[e.name];
    if (!(g.shape() == e.value.shape())) {
      throw StateError("optimizer: gradient shape " + g.shape().str() + " != parameter shape " +
                       e.value.shape().str() + " for '" + e.name + "'");
    }
    auto& slot = state.slots[e.name];
    const std::size_t n = e.value.size();
    if (slot.m.size() != n) slot.m.assign(n, 0.0);
    if (state.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < n; ++i) {
        slot.m[i] = state.momentum * slot.m[i] + static_cast<double>(g[i]);
        e.value[i] = static_cast<T>(static_cast<double>(e.value[i]) - state.learning_rate * slot.m[i]);
      }
    } else {
      if (slot.v.size() != n) slot.v.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[i]);
        slot.m[i] = state.beta1 * slot.m[i] + (1.0 - state.beta1) * gi;
        slot.v[i] = state.beta2 * slot.v[i] + (1.0 - state.beta2) * gi * gi;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        const double upd = state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
        if (upd != 0.0) e.value[i] = static_cast<T>(static_cast<double>(e.value[i]) - upd);
      }
    }
  }
}

/// Sets the trainable flag on every parameter whose name starts with `prefix`.
/// Returns the number of matching parameters; throws when none match.
template <typename T>
std::size_t set_trainable(ParamStore<T>& params, std::string_view prefix, bool flag) {
  std::size_t hits = 0;
  for (auto& e : params.entries()) {
    if (e.kind != EntryKind::parameter) continue;
    if (e.name.compare(0, prefix.size(), prefix) != 0) continue;
    e.trainable = flag;
    ++hits;
  }
  if (hits == 0) {
    std::set<std::string> tops;
    for (const auto& e : params.entries()) tops.insert(e.name.substr(0, e.name.find('.') + 1));
    std::string list;
    for (const auto& t : tops) list += (list.empty() ? "" : ", ") + t;
    throw ConfigError("no parameter matches prefix '" + std::string(prefix) + "'; available prefixes: " + list);
  }
  return hits;
}

}  // namespace cnnzoo
