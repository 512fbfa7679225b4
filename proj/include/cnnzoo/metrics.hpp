#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnnzoo/bbox.hpp"
#include "cnnzoo/errors.hpp"

namespace cnnzoo {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;  // classes x classes, row-major
  std::vector<std::string> labels;

  explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts(c * c, 0) {
    for (std::size_t i = 0; i < c; ++i) labels.push_back(std::to_string(i));
  }

  std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }

  std::size_t total() const {
    std::size_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }
  std::size_t support(std::size_t truth) const {
    std::size_t t = 0;
    for (std::size_t p = 0; p < classes; ++p) t += at(truth, p);
    return t;
  }
  std::size_t predicted(std::size_t pred) const {
    std::size_t t = 0;
    for (std::size_t r = 0; r < classes; ++r) t += at(r, pred);
    return t;
  }
};

inline ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> pred, std::size_t classes) {
  if (truth.size() != pred.size()) throw DataError("confusion_matrix: label lists differ in length");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = pred[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes || static_cast<std::size_t>(p) >= classes) {
      throw DataError("confusion_matrix: label out of range at sample " + std::to_string(i));
    }
    ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ClassificationReport {
  double accuracy = 0.0;
  double precision = 0.0;  // support-weighted
  double recall = 0.0;     // support-weighted; equals accuracy
  double f1 = 0.0;         // support-weighted
  std::vector<ClassMetrics> per_class;
};

/// Per-class precision/recall/F1 (0 on empty denominators) averaged with
/// support weights.
inline ClassificationReport classification_report(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw ConfigError("classification_report: empty confusion matrix");
  ClassificationReport r;
  std::size_t trace = 0;
  for (std::size_t c = 0; c < cm.classes; ++c) {
    const std::size_t tp = cm.at(c, c);
    trace += tp;
    const std::size_t pred = cm.predicted(c);
    const std::size_t sup = cm.support(c);
    ClassMetrics m;
    m.support = sup;
    m.precision = pred ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
    m.recall = sup ? static_cast<double>(tp) / static_cast<double>(sup) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    const double w = static_cast<double>(sup) / static_cast<double>(total);
    r.precision += w * m.precision;
    r.recall += w * m.recall;
    r.f1 += w * m.f1;
    r.per_class.push_back(m);
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

/// Intersection over union; 0 when the union is empty.
inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct DetectionPrediction {
  int label = 0;
  BBox box;
};

struct DetectionReport {
  ClassificationReport classification;
  ConfusionMatrix confusion;
  std::optional<double> mean_iou;  // absent when no target carries a box
  std::size_t boxes_evaluated = 0;
  std::size_t iou_at_least_half = 0;
};

template <typename Target>
DetectionReport detection_report(std::span<const DetectionPrediction> preds, std::span<const Target> targets,
                                 std::size_t classes) {
  if (preds.size() != targets.size()) {
    throw DataError("detection_report: " + std::to_string(preds.size()) + " predictions for " +
                    std::to_string(targets.size()) + " targets");
  }
  std::vector<int> truth;
  std::vector<int> guess;
  DetectionReport r;
  double iou_sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    truth.push_back(targets[i].label);
    guess.push_back(preds[i].label);
    if (!targets[i].box) continue;
    const double v = iou(preds[i].box.clamped(), targets[i].box->canonical());
    iou_sum += v;
    ++r.boxes_evaluated;
    if (v >= 0.5) ++r.iou_at_least_half;
  }
  r.confusion = confusion_matrix(truth, guess, classes);
  r.classification = classification_report(r.confusion);
  if (r.boxes_evaluated) r.mean_iou = iou_sum / static_cast<double>(r.boxes_evaluated);
  return r;
}

}  // namespace cnnzoo
