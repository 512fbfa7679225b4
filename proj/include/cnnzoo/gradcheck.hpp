#pragma once

// Central-difference gradient checking in double precision.

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>

#include "cnnzoo/graph.hpp"
#include "cnnzoo/losses.hpp"
#include "cnnzoo/rng.hpp"

namespace cnnzoo {

using LossFn = std::function<LossResult<double>(const Tensor<double>& logits)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(1e-8, |a| + |n|)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Moves the check away from the symmetric initial point (gamma = 1, beta and
/// biases 0), where many gradients are exactly zero and only round-off is left.
template <typename T>
void perturb_affine(Graph<T>& g, std::uint64_t seed) {
  Rng rng(seed, 0x6C);
  for (auto& e : g.params.entries()) {
    if (e.kind != EntryKind::parameter) continue;
    if (e.name.ends_with(".gamma")) {
      for (auto& v : e.value.values()) v = static_cast<T>(rng.uniform(0.5, 1.5));
    } else if (e.name.ends_with(".beta") || e.name.ends_with(".bias")) {
      for (auto& v : e.value.values()) v = static_cast<T>(rng.uniform(-0.5, 0.5));
    }
  }
}

/// Compares the analytic gradient of every trainable scalar against
/// (L(theta+eps) - L(theta-eps)) / (2 eps). Batch norm runs in train mode with
/// momentum 0 and dropout is disabled for the duration of the check.
inline GradCheckResult gradcheck(Graph<double>& g, const LossFn& loss, const Tensor<double>& x, double eps = 1e-4) {
  const layers::BatchNormConfig saved_bn = g.bn;
  g.bn.momentum = 0.0;
  ForwardOptions fo;
  fo.mode = layers::Mode::train;
  fo.dropout_active = false;

  g.forward(x, fo);
  const LossResult<double> base = loss(g.logits());
  const BackwardResult<double> analytic = g.backward(base.grad);

  // First node reading each parameter: re-evaluation starts there.
  std::unordered_map<std::string, std::size_t> first_use;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    for (const auto& p : g.nodes[i].params) first_use.emplace(p, i);

  auto eval = [&](std::size_t from) {
    g.forward_from(from);
    return loss(g.logits()).loss;
  };

  GradCheckResult r;
  for (auto& e : g.params.entries()) {
    if (!e.is_trainable_param()) continue;
    const auto it = first_use.find(e.name);
    if (it == first_use.end()) continue;
    const std::size_t from = it->second;
    const Tensor<double>* grad = analytic.params.contains(e.name) ? &analytic.params[e.name] : nullptr;
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      const double saved = e.value[k];
      e.value[k] = saved + eps;
      const double plus = eval(from);
      e.value[k] = saved - eps;
      const double minus = eval(from);
      e.value[k] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = grad ? (*grad)[k] : 0.0;
      const double err = relative_error(a, numeric);
      ++r.checked;
      if (err > r.max_rel_error || r.worst_param.empty()) {
        r.max_rel_error = std::max(r.max_rel_error, err);
        r.worst_param = e.name;
        r.worst_index = k;
        r.worst_analytic = a;
        r.worst_numeric = numeric;
      }
    }
    g.forward_from(from);  // leave the tape consistent with restored values
  }
  g.bn = saved_bn;
  return r;
}

}  // namespace cnnzoo
