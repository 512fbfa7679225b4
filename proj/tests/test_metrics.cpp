#include <gtest/gtest.h>

#include <vector>

#include "cnnzoo/dataset.hpp"
#include "cnnzoo/metrics.hpp"
#include "cnnzoo/rng.hpp"

using namespace cnnzoo;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t p = 0; p < rows.size(); ++p) cm.at(t, p) = rows[t][p];
  return cm;
}

BBox random_box(Rng& rng) {
  const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform(), d = rng.uniform();
  return BBox{a, b, c, d}.canonical();
}

}  // namespace

TEST(Confusion, HandExample) {
  const std::vector<int> truth{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const auto cm = confusion_matrix(truth, pred, 2);
  EXPECT_EQ(cm.at(0, 0), 1u);
  EXPECT_EQ(cm.at(0, 1), 1u);
  EXPECT_EQ(cm.at(1, 0), 0u);
  EXPECT_EQ(cm.at(1, 1), 2u);
}

TEST(Confusion, PerfectIsDiagonal) {
  const std::vector<int> labels{0, 2, 1, 2, 0};
  const auto cm = confusion_matrix(labels, labels, 3);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t p = 0; p < 3; ++p) {
      if (t != p) {
        EXPECT_EQ(cm.at(t, p), 0u);
      }
    }
  EXPECT_EQ(cm.total(), 5u);
}

TEST(Confusion, AllPredictedZeroIsSingleColumn) {
  const std::vector<int> truth{0, 1, 2, 1}, pred(4, 0);
  const auto cm = confusion_matrix(truth, pred, 3);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(cm.at(t, 0), cm.support(t));
    EXPECT_EQ(cm.at(t, 1) + cm.at(t, 2), 0u);
  }
}

TEST(Confusion, RowSumsEqualSupport) {
  Rng rng(1);
  std::vector<int> truth, pred;
  std::vector<std::size_t> support(4, 0);
  for (int i = 0; i < 500; ++i) {
    truth.push_back(static_cast<int>(rng.below(4)));
    pred.push_back(static_cast<int>(rng.below(4)));
    ++support[static_cast<std::size_t>(truth.back())];
  }
  const auto cm = confusion_matrix(truth, pred, 4);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(cm.support(c), support[c]);
}

TEST(Confusion, Errors) {
  const std::vector<int> a{0, 1}, b{0}, bad{0, 2}, negative{0, -1};
  EXPECT_THROW(confusion_matrix(a, b, 2), DataError);
  EXPECT_THROW(confusion_matrix(a, bad, 2), DataError);
  EXPECT_THROW(confusion_matrix(negative, a, 2), DataError);
}

TEST(Report, DiagonalIsPerfect) {
  const auto r = classification_report(from_rows({{3, 0}, {0, 5}}));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(Report, MajorityClassOnly) {
  const auto r = classification_report(from_rows({{28, 0}, {0, 72}}));
  EXPECT_EQ(r.accuracy, 1.0);
  const auto m = classification_report(from_rows({{0, 28}, {0, 72}}));
  const double p = 0.72, f1 = 2 * p / (p + 1.0);
  EXPECT_NEAR(m.accuracy, 0.72, 1e-15);
  EXPECT_NEAR(m.recall, 0.72, 1e-15);
  EXPECT_NEAR(m.precision, 0.72 * p, 1e-15);
  EXPECT_NEAR(m.precision, 0.5184, 1e-12);
  EXPECT_NEAR(m.f1, 0.72 * f1, 1e-15);
  EXPECT_NEAR(m.f1, 0.6028, 1e-4);
  EXPECT_EQ(m.per_class[0].precision, 0.0);
  EXPECT_EQ(m.per_class[0].f1, 0.0);
}

TEST(Report, EmptyMatrixIsConfigError) { EXPECT_THROW(classification_report(ConfusionMatrix(3)), ConfigError); }

TEST(Report, WeightedRecallEqualsAccuracyAndRangesHold) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + rng.below(6);
    ConfusionMatrix cm(C);
    for (auto& v : cm.counts) v = rng.below(4) == 0 ? 0 : rng.below(50);
    cm.at(0, 0) += 1;
    const auto r = classification_report(cm);
    ASSERT_NEAR(r.recall, r.accuracy, 1e-12);
    for (double v : {r.accuracy, r.precision, r.recall, r.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
    for (const auto& m : r.per_class) {
      EXPECT_GE(m.f1, 0.0);
      EXPECT_LE(m.f1, std::max(m.precision, m.recall) + 1e-12);
    }
  }
}

TEST(Iou, Examples) {
  const BBox a{0, 0, 1, 1};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, BBox{2, 2, 3, 3}), 0.0);
  EXPECT_NEAR(iou(a, BBox{0.5, 0, 1.5, 1}), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(iou(BBox{0.2, 0.2, 0.2, 0.5}, BBox{0.2, 0.2, 0.2, 0.5}), 0.0);
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const BBox a = random_box(rng), b = random_box(rng);
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_GE(iou(a, b), 0.0);
    EXPECT_LE(iou(a, b), 1.0);
  }
}

TEST(DetectionReport, PerfectLabelsAndBoxes) {
  const std::vector<DetectionTarget> t{{1, BBox{0.1, 0.1, 0.5, 0.5}}, {0, std::nullopt}};
  const std::vector<DetectionPrediction> p{{1, BBox{0.1, 0.1, 0.5, 0.5}}, {0, BBox{}}};
  const auto r = detection_report(std::span<const DetectionPrediction>(p), std::span<const DetectionTarget>(t), 2);
  EXPECT_EQ(r.classification.accuracy, 1.0);
  ASSERT_TRUE(r.mean_iou.has_value());
  EXPECT_EQ(*r.mean_iou, 1.0);
  EXPECT_EQ(r.boxes_evaluated, 1u);
}

TEST(DetectionReport, MeanOverValidBoxes) {
  const std::vector<DetectionTarget> t{
      {1, BBox{0, 0, 0.5, 0.5}}, {1, BBox{0, 0, 0.5, 0.5}}, {0, std::nullopt}};
  // Second prediction covers half the target and nothing else: IoU 0.5.
  const std::vector<DetectionPrediction> p{{1, BBox{0, 0, 0.5, 0.5}}, {1, BBox{0, 0, 0.25, 0.5}}, {1, BBox{}}};
  const auto r = detection_report(std::span<const DetectionPrediction>(p), std::span<const DetectionTarget>(t), 2);
  ASSERT_TRUE(r.mean_iou.has_value());
  EXPECT_NEAR(*r.mean_iou, 0.75, 1e-15);
  EXPECT_EQ(r.iou_at_least_half, 2u);
  EXPECT_NEAR(r.classification.accuracy, 2.0 / 3.0, 1e-15);
}

TEST(DetectionReport, NoBoxesMeansNoMeanIou) {
  const std::vector<DetectionTarget> t{{0, std::nullopt}, {1, std::nullopt}};
  const std::vector<DetectionPrediction> p{{0, BBox{0, 0, 1, 1}}, {0, BBox{}}};
  const auto r = detection_report(std::span<const DetectionPrediction>(p), std::span<const DetectionTarget>(t), 2);
  EXPECT_FALSE(r.mean_iou.has_value());
  EXPECT_NEAR(r.classification.accuracy, 0.5, 1e-15);
}

TEST(DetectionReport, LengthMismatchIsDataError) {
  const std::vector<DetectionTarget> t{{0, std::nullopt}};
  const std::vector<DetectionPrediction> p;
  EXPECT_THROW(detection_report(std::span<const DetectionPrediction>(p), std::span<const DetectionTarget>(t), 2),
               DataError);
}
