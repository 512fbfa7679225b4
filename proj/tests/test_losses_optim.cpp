#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "cnnzoo/audit.hpp"
#include "cnnzoo/dataset.hpp"
#include "cnnzoo/losses.hpp"
#include "cnnzoo/optim.hpp"
#include "cnnzoo/train.hpp"
#include "cnnzoo/zoo.hpp"
#include "support.hpp"

using namespace cnnzoo;
using testing_support::max_fd_error;
using testing_support::random_tensor;

namespace {

Tensor<double> logits(std::vector<double> v) {
  const std::size_t c = v.size();
  return Tensor<double>(Shape{1, c, 1, 1}, std::move(v));
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

template <typename T>
std::vector<std::vector<T>> snapshot(const ParamStore<T>& p) {
  std::vector<std::vector<T>> out;
  for (const auto& e : p) out.emplace_back(e.value.values().begin(), e.value.values().end());
  return out;
}

Graph<float> tiny_classifier(std::size_t classes = 2) {
  ModelConfig c;
  c.kind = ModelKind::evolved_baseline;
  c.classes = classes;
  c.width = 0.0625;
  c.input = InputSpec{3, 32, 32};
  auto g = build_evolved_baseline<float>(c);
  init_params(g, 1);
  return g;
}

}  // namespace

// --- cross entropy --------------------------------------------------------

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  for (std::size_t C : {2u, 3u, 10u}) {
    const std::vector<int> label{1};
    EXPECT_NEAR(cross_entropy(logits(std::vector<double>(C, 0.7)), label).loss, std::log(double(C)), 1e-12);
  }
  const std::vector<int> label{0};
  EXPECT_NEAR(cross_entropy(logits({0, 0}), label).loss, 0.6931, 1e-4);
}

TEST(CrossEntropy, ClosedForm) {
  const std::vector<int> label{1};
  EXPECT_NEAR(cross_entropy(logits({1, 2}), label).loss, std::log(1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(cross_entropy(logits({1, 2}), label).loss, 0.3133, 1e-4);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
  const std::vector<int> label{0};
  const auto r = cross_entropy(logits({1000, 0}), label);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  for (double g : r.grad.values()) EXPECT_TRUE(std::isfinite(g));
  const auto f = cross_entropy(Tensor<float>(Shape{1, 2, 1, 1}, std::vector<float>{1000.0f, 0.0f}), label);
  EXPECT_TRUE(std::isfinite(f.loss));
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHotOverN) {
  Rng rng(1);
  auto z = random_tensor(Shape{3, 4, 1, 1}, rng);
  const std::vector<int> labels{0, 3, 2};
  const auto r = cross_entropy(z, labels);
  for (std::size_t n = 0; n < 3; ++n) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 4; ++c) sum += std::exp(z[n * 4 + c]);
    for (std::size_t c = 0; c < 4; ++c) {
      const double p = std::exp(z[n * 4 + c]) / sum;
      EXPECT_NEAR(r.grad[n * 4 + c], (p - (int(c) == labels[n] ? 1.0 : 0.0)) / 3.0, 1e-12);
    }
  }
  auto f = [&] { return cross_entropy(z, labels).loss; };
  EXPECT_LT(max_fd_error(z, r.grad, f), 1e-6);
}

TEST(CrossEntropy, OutOfRangeLabelNamesSample) {
  const std::vector<int> labels{0, 5};
  try {
    cross_entropy(Tensor<double>(Shape{2, 2, 1, 1}), labels);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos) << e.what();
  }
  const std::vector<int> negative{-1};
  EXPECT_THROW(cross_entropy(Tensor<double>(Shape{1, 2, 1, 1}), negative), DataError);
}

// --- bbox mse -------------------------------------------------------------

TEST(BboxMse, PerfectPredictionIsZero) {
  Rng rng(2);
  const auto t = random_tensor(Shape{3, 4, 1, 1}, rng);
  EXPECT_EQ(bbox_mse(t, t, {true, true, true}).loss, 0.0);
}

TEST(BboxMse, AllInvalidIsZero) {
  Rng rng(3);
  const auto p = random_tensor(Shape{2, 4, 1, 1}, rng);
  const auto t = random_tensor(Shape{2, 4, 1, 1}, rng);
  const auto r = bbox_mse(p, t, {false, false});
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(BboxMse, UniformErrorGivesDeltaSquared) {
  const double delta = 0.3;
  const Tensor<double> t(Shape{1, 4, 1, 1}, std::vector<double>{0.1, 0.2, 0.5, 0.6});
  Tensor<double> p = t;
  for (auto& v : p.values()) v += delta;
  EXPECT_NEAR(bbox_mse(p, t, {true}).loss, delta * delta, 1e-15);
}

TEST(BboxMse, MaskedSamplesContributeNothing) {
  Rng rng(4);
  auto p = random_tensor(Shape{3, 4, 1, 1}, rng);
  const auto t = random_tensor(Shape{3, 4, 1, 1}, rng);
  const std::vector<bool> mask{true, false, true};
  const auto r = bbox_mse(p, t, mask);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(r.grad[4 + k], 0.0);
  auto f = [&] { return bbox_mse(p, t, mask).loss; };
  EXPECT_LT(max_fd_error(p, r.grad, f), 1e-6);
}

// --- composite ------------------------------------------------------------

TEST(CompositeLoss, BackgroundOnlyBatchIsBitIdenticalToCrossEntropy) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto out = random_tensor(Shape{4, 3 + 4, 1, 1}, rng, 3.0);
    std::vector<DetectionTarget> targets;
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
      targets.push_back({i % 3, std::nullopt});
      labels.push_back(i % 3);
    }
    Tensor<double> cls(Shape{4, 3, 1, 1});
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t c = 0; c < 3; ++c) cls[n * 3 + c] = out[n * 7 + c];
    const auto comp = composite_detection_loss(out, std::span<const DetectionTarget>(targets), CompositeLossCfg{1.0, 3});
    const auto ce = cross_entropy(cls, labels);
    EXPECT_TRUE(bit_equal(comp.loss, ce.loss)) << comp.loss << " vs " << ce.loss;
  }
}

TEST(CompositeLoss, PerfectLogitsLeaveLambdaDeltaSquared) {
  const double delta = 0.2, lambda = 2.5;
  const BBox box{0.1, 0.2, 0.5, 0.6};
  Tensor<double> out(Shape{1, 6, 1, 1}, std::vector<double>{-500, 500, 0.1 + delta, 0.2 + delta, 0.5 + delta, 0.6 + delta});
  const std::vector<DetectionTarget> t{{1, box}};
  const auto r = composite_detection_loss(out, std::span<const DetectionTarget>(t), CompositeLossCfg{lambda, 2});
  EXPECT_NEAR(r.loss, lambda * delta * delta, 1e-12);
}

TEST(CompositeLoss, ZeroWeightIgnoresBoxes) {
  Rng rng(5);
  const auto out = random_tensor(Shape{2, 6, 1, 1}, rng);
  const std::vector<DetectionTarget> t{{1, BBox{0.1, 0.1, 0.4, 0.4}}, {0, std::nullopt}};
  const std::vector<int> labels{1, 0};
  Tensor<double> cls(Shape{2, 2, 1, 1});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c) cls[n * 2 + c] = out[n * 6 + c];
  const auto r = composite_detection_loss(out, std::span<const DetectionTarget>(t), CompositeLossCfg{0.0, 2});
  EXPECT_DOUBLE_EQ(r.loss, cross_entropy(cls, labels).loss);
}

TEST(CompositeLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto out = random_tensor(Shape{3, 7, 1, 1}, rng);
    const std::vector<DetectionTarget> t{{1, BBox{0.1, 0.1, 0.4, 0.7}}, {0, std::nullopt}, {2, BBox{0.3, 0.2, 0.9, 0.5}}};
    const CompositeLossCfg cfg{1.5, 3};
    const auto r = composite_detection_loss(out, std::span<const DetectionTarget>(t), cfg);
    auto f = [&] { return composite_detection_loss(out, std::span<const DetectionTarget>(t), cfg).loss; };
    EXPECT_LT(max_fd_error(out, r.grad, f), 1e-6);
  }
}

TEST(CompositeLoss, RejectsNegativeWeightAndWrongWidth) {
  const std::vector<DetectionTarget> t{{0, std::nullopt}};
  EXPECT_THROW(composite_detection_loss(Tensor<double>(Shape{1, 6, 1, 1}), std::span<const DetectionTarget>(t),
                                        CompositeLossCfg{-1.0, 2}),
               ConfigError);
  EXPECT_THROW(composite_detection_loss(Tensor<double>(Shape{1, 5, 1, 1}), std::span<const DetectionTarget>(t),
                                        CompositeLossCfg{1.0, 2}),
               ShapeError);
}

// --- optimizers -----------------------------------------------------------

namespace {

ParamStore<double> scalar_store(double theta) {
  ParamStore<double> p;
  p.add_parameter("theta", Shape{1, 1, 1, 1}).fill(theta);
  return p;
}

Gradients<double> scalar_grad(double g) {
  Gradients<double> grads;
  grads.get_or_zero("theta", Shape{1, 1, 1, 1}).fill(g);
  return grads;
}

}  // namespace

TEST(Optimizer, SgdDefinition) {
  auto p = scalar_store(1.0);
  auto st = OptimState::sgd(0.1, 0.0);
  optimizer_step(p, scalar_grad(1.0), st);
  EXPECT_DOUBLE_EQ(p["theta"][0], 0.9);
}

TEST(Optimizer, SgdMomentumAccumulates) {
  auto p = scalar_store(0.0);
  auto st = OptimState::sgd(1.0, 0.5);
  optimizer_step(p, scalar_grad(1.0), st);  // v=1
  optimizer_step(p, scalar_grad(1.0), st);  // v=1.5
  EXPECT_DOUBLE_EQ(p["theta"][0], -2.5);
}

TEST(Optimizer, AdamFirstStepIsSignNormalised) {
  auto p = scalar_store(1.0);
  auto st = OptimState::adam(0.001);
  optimizer_step(p, scalar_grad(p["theta"][0]), st);  // f = theta^2/2
  EXPECT_NEAR(p["theta"][0], 1.0 - 0.001, 1e-9);
}

TEST(Optimizer, AdamMatchesReferenceRecurrence) {
  auto p = scalar_store(2.0);
  auto st = OptimState::adam(0.01);
  double theta = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 25; ++t) {
    const double g = theta;  // f = theta^2/2
    optimizer_step(p, scalar_grad(p["theta"][0]), st);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p["theta"][0], theta, 1e-12);
}

TEST(Optimizer, ZeroGradientLeavesParametersBitIdentical) {
  for (auto make : {+[] { return OptimState::sgd(0.1); }, +[] { return OptimState::adam(1e-3); }}) {
    ParamStore<float> p;
    Rng rng(6);
    for (auto& v : p.add_parameter("w", Shape{3, 2, 2, 2}).values()) v = static_cast<float>(rng.normal());
    p.add_buffer("rm", Shape{3, 1, 1, 1}, 0.5f);
    const auto before = snapshot(p);
    Gradients<float> g;
    g.get_or_zero("w", Shape{3, 2, 2, 2});
    auto st = make();
    for (int i = 0; i < 3; ++i) optimizer_step(p, g, st);
    EXPECT_EQ(snapshot(p), before);
  }
}

TEST(Optimizer, FrozenEntriesUntouched) {
  ParamStore<double> p;
  p.add_parameter("a", Shape{2, 1, 1, 1}).fill(1.0);
  p.add_parameter("b", Shape{2, 1, 1, 1}).fill(1.0);
  p.entry("b").trainable = false;
  Gradients<double> g;
  g.get_or_zero("a", Shape{2, 1, 1, 1}).fill(1.0);
  auto st = OptimState::adam(0.1);
  optimizer_step(p, g, st);
  EXPECT_NE(p["a"][0], 1.0);
  EXPECT_EQ(p["b"][0], 1.0);
  Gradients<double> extra = g;
  extra.get_or_zero("b", Shape{2, 1, 1, 1});
  EXPECT_THROW(optimizer_step(p, extra, st), StateError);
}

TEST(Optimizer, ShapeMismatchIsStateError) {
  auto p = scalar_store(1.0);
  Gradients<double> g;
  g.get_or_zero("theta", Shape{2, 1, 1, 1});
  auto st = OptimState::sgd(0.1);
  EXPECT_THROW(optimizer_step(p, g, st), StateError);
}

TEST(Optimizer, SmallSgdStepDoesNotIncreaseLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelConfig c;
    c.kind = ModelKind::mini_yolo;
    c.classes = 3;
    c.width = 0.25;
    c.input = InputSpec{3, 32, 32};
    auto g = build_mini_yolo<double>(c);
    init_params(g, seed);
    Rng rng(seed, 77);
    const auto x = random_tensor(g.input.batch(4), rng);
    const std::vector<DetectionTarget> t{{1, BBox{0.1, 0.1, 0.5, 0.5}}, {0, std::nullopt}, {2, BBox{0.2, 0.3, 0.9, 0.8}},
                                         {1, std::nullopt}};
    auto loss_now = [&] {
      g.forward(x);
      return composite_detection_loss(g.logits(), std::span<const DetectionTarget>(t), CompositeLossCfg{1.0, 3});
    };
    const auto before = loss_now();
    const auto grads = g.backward(before.grad);
    auto st = OptimState::sgd(1e-4, 0.0);
    optimizer_step(g.params, grads.params, st);
    EXPECT_LE(loss_now().loss, before.loss + 1e-6) << "seed " << seed;
  }
}

// --- set_trainable --------------------------------------------------------

TEST(SetTrainable, NoMatchListsPrefixes) {
  auto g = tiny_classifier();
  try {
    set_trainable(g.params, "nothing.", false);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("stem."), std::string::npos) << m;
    EXPECT_NE(m.find("stage1."), std::string::npos) << m;
  }
}

TEST(SetTrainable, BuffersUnaffectedAndInvolution) {
  auto g = tiny_classifier();
  const auto before = audit(g);
  set_trainable(g.params, "stage", false);
  for (const auto& e : g.params) {
    if (e.kind == EntryKind::buffer) {
      EXPECT_FALSE(e.trainable);
    }
  }
  const auto frozen = audit(g);
  EXPECT_GT(frozen.params_frozen, 0u);
  EXPECT_EQ(frozen.buffers, before.buffers);
  set_trainable(g.params, "stage", true);
  const auto after = audit(g);
  EXPECT_EQ(after.params_trainable, before.params_trainable);
  EXPECT_EQ(after.params_frozen, 0u);
}

// --- training loop --------------------------------------------------------

TEST(TrainEpoch, FrozenBackboneBitIdenticalAfterTraining) {
  auto g = tiny_classifier();
  for (const char* p : {"stem.", "stage1.", "stage2.", "stage3.", "stage4."}) set_trainable(g.params, p, false);
  const auto ds = gen_synthetic_classification(2, 8, 32, 3);
  std::vector<std::vector<float>> frozen_before;
  for (const auto& e : g.params)
    if (e.kind == EntryKind::parameter && !e.trainable) frozen_before.emplace_back(e.value.values().begin(), e.value.values().end());
  const std::vector<float> head_before(g.params["head.fc.weight"].values().begin(), g.params["head.fc.weight"].values().end());
  auto st = OptimState::adam(1e-2);
  TrainOptions opt;
  opt.batch = 4;
  for (std::size_t e = 0; e < 2; ++e) train_epoch(g, ds, st, opt, e);
  std::vector<std::vector<float>> frozen_after;
  for (const auto& e : g.params)
    if (e.kind == EntryKind::parameter && !e.trainable) frozen_after.emplace_back(e.value.values().begin(), e.value.values().end());
  EXPECT_EQ(frozen_before, frozen_after);
  const std::vector<float> head_after(g.params["head.fc.weight"].values().begin(), g.params["head.fc.weight"].values().end());
  EXPECT_NE(head_before, head_after);
}

TEST(TrainEpoch, ZeroLearningRateKeepsParameters) {
  auto g = tiny_classifier();
  const auto ds = gen_synthetic_classification(2, 6, 32, 4);
  std::vector<std::vector<float>> before;
  for (const auto& e : g.params)
    if (e.kind == EntryKind::parameter) before.emplace_back(e.value.values().begin(), e.value.values().end());
  auto st = OptimState::sgd(0.0);
  TrainOptions opt;
  opt.batch = 4;
  train_epoch(g, ds, st, opt, 0);
  std::vector<std::vector<float>> after;
  for (const auto& e : g.params)
    if (e.kind == EntryKind::parameter) after.emplace_back(e.value.values().begin(), e.value.values().end());
  EXPECT_EQ(before, after);
}

// With lr 0, no batch norm or dropout and identical batching, the training
// loss of the epoch equals the evaluation loss.
TEST(TrainEpoch, ZeroLearningRateLossEqualsEvaluationLoss) {
  ModelConfig c;
  c.kind = ModelKind::mini_yolo;
  c.classes = 2;
  c.width = 0.25;
  c.input = InputSpec{3, 32, 32};
  auto g = build_mini_yolo<float>(c);
  init_params(g, 2);
  const auto ds = gen_synthetic_detection(12, 0.3, 32, 5);
  auto st = OptimState::sgd(0.0);
  TrainOptions opt;
  opt.batch = 5;
  opt.objective = Objective::detection;
  opt.shuffle = false;
  const auto stats = train_epoch(g, ds, st, opt, 0);
  const auto eval = predict(g, ds, Objective::detection, 5);
  EXPECT_NEAR(stats.mean_loss, eval.mean_loss, 1e-5 * std::max(1.0, eval.mean_loss));
}

TEST(TrainEpoch, SameSeedBitIdenticalParameters) {
  const auto ds = gen_synthetic_classification(2, 6, 32, 4);
  auto run = [&] {
    auto g = tiny_classifier();
    auto st = OptimState::adam(1e-3);
    TrainOptions opt;
    opt.batch = 4;
    opt.seed = 11;
    for (std::size_t e = 0; e < 2; ++e) train_epoch(g, ds, st, opt, e);
    return snapshot(g.params);
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainEpoch, InputMismatchNamesBatch) {
  auto g = tiny_classifier();
  const auto ds = gen_synthetic_classification(2, 2, 48, 1);
  auto st = OptimState::adam();
  try {
    train_epoch(g, ds, st, TrainOptions{}, 0);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
  }
}
