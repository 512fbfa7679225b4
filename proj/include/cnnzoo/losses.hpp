#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnnzoo/bbox.hpp"
#include "cnnzoo/errors.hpp"
#include "cnnzoo/tensor.hpp"

namespace cnnzoo {

template <typename T>
struct LossResult {
  T loss = T(0);
  Tensor<T> grad;  // dLoss/dInput, same shape as the loss input
};

/// Mean over the batch of -log softmax(logits)[label]; logits are (n, C, 1, 1).
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  const std::size_t C = s.c * s.h * s.w;
  if (labels.size() != s.n) {
    throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(s.n));
  }
  LossResult<T> r{T(0), Tensor<T>(s)};
  const T inv_n = T(1) / static_cast<T>(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= C) {
      throw DataError("cross_entropy: label " + std::to_string(label) + " out of range [0," + std::to_string(C) +
                      ") at sample " + std::to_string(n));
    }
    const T* z = &logits.data()[n * C];
    T mx = z[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
    T sum = T(0);
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(z[c] - mx);
    const T lse = mx + std::log(sum);
    r.loss += (lse - z[label]) * inv_n;
    T* g = &r.grad.data()[n * C];
    for (std::size_t c = 0; c < C; ++c) {
      const T p = std::exp(z[c] - lse);
      g[c] = (p - (c == static_cast<std::size_t>(label) ? T(1) : T(0))) * inv_n;
    }
  }
  return r;
}

/// Mean over valid samples and the four coordinates of (pred - target)^2.
/// With no valid samples the loss and gradient are exactly zero.
template <typename T>
LossResult<T> bbox_mse(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<bool>& valid) {
  const Shape& s = pred.shape();
  if (!(target.shape() == s) || s.c * s.h * s.w != 4 || valid.size() != s.n) {
    throw ShapeError("bbox_mse: expected (n,4) predictions, targets and n mask entries");
  }
  LossResult<T> r{T(0), Tensor<T>(s)};
  std::size_t count = 0;
  for (bool v : valid) count += v ? 1 : 0;
  if (count == 0) return r;
  const T denom = static_cast<T>(4 * count);
  for (std::size_t n = 0; n < s.n; ++n) {
    if (!valid[n]) continue;
    for (std::size_t k = 0; k < 4; ++k) {
      const T d = pred[n * 4 + k] - target[n * 4 + k];
      r.loss += d * d / denom;
      r.grad[n * 4 + k] = T(2) * d / denom;
    }
  }
  return r;
}

struct CompositeLossCfg {
  double box_weight = 1.0;
  std::size_t classes = 2;

  void check() const {
    if (!(box_weight >= 0.0)) throw ConfigError("composite loss: box_weight must be non-negative");
  }
};

/// Per-image target: class label and, for foreground images, one box.
struct DetectionTarget {
  int label = 0;
  std::optional<BBox> box;
};

/// Cross-entropy on the first C outputs plus box_weight * masked MSE on the
/// last four. A batch without boxes yields exactly the cross-entropy value.
template <typename T>
LossResult<T> composite_detection_loss(const Tensor<T>& output, std::span<const DetectionTarget> targets,
                                       const CompositeLossCfg& cfg) {
  cfg.check();
  const Shape& s = output.shape();
  const std::size_t C = cfg.classes;
  const std::size_t D = s.c * s.h * s.w;
  if (D != C + 4) {
    throw ShapeError("composite loss: output width " + std::to_string(D) + " != classes + 4 = " + std::to_string(C + 4));
  }
  if (targets.size() != s.n) throw DataError("composite loss: target count does not match batch");

  Tensor<T> logits(Shape{s.n, C, 1, 1});
  Tensor<T> boxes(Shape{s.n, 4, 1, 1});
  Tensor<T> goal(Shape{s.n, 4, 1, 1});
  std::vector<int> labels(s.n);
  std::vector<bool> valid(s.n, false);
  bool any_box = false;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < C; ++c) logits[n * C + c] = output[n * D + c];
    for (std::size_t k = 0; k < 4; ++k) boxes[n * 4 + k] = output[n * D + C + k];
    labels[n] = targets[n].label;
    if (targets[n].box) {
      valid[n] = true;
      any_box = true;
      const auto c = targets[n].box->coords();
      for (std::size_t k = 0; k < 4; ++k) goal[n * 4 + k] = static_cast<T>(c[k]);
    }
  }
  const LossResult<T> ce = cross_entropy(logits, labels);
  LossResult<T> r{ce.loss, Tensor<T>(s)};
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < C; ++c) r.grad[n * D + c] = ce.grad[n * C + c];
  if (!any_box) return r;

  const LossResult<T> box = bbox_mse(boxes, goal, valid);
  const T lambda = static_cast<T>(cfg.box_weight);
  r.loss = ce.loss + lambda * box.loss;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t k = 0; k < 4; ++k) r.grad[n * D + C + k] = lambda * box.grad[n * 4 + k];
  return r;
}

}  // namespace cnnzoo
