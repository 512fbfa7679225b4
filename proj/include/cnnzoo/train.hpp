#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cnnzoo/dataset.hpp"
#include "cnnzoo/graph.hpp"
#include "cnnzoo/losses.hpp"
#include "cnnzoo/metrics.hpp"
#include "cnnzoo/optim.hpp"
#include "cnnzoo/rng.hpp"

namespace cnnzoo {

enum class Objective { classification, detection };

/// Loss on the logits node for either objective.
template <typename T>
LossResult<T> objective_loss(Objective obj, const Tensor<T>& logits, std::span<const DetectionTarget> targets,
                             std::size_t classes, double box_weight = 1.0) {
  if (obj == Objective::detection) return composite_detection_loss(logits, targets, CompositeLossCfg{box_weight, classes});
  std::vector<int> labels;
  labels.reserve(targets.size());
  for (const auto& t : targets) labels.push_back(t.label);
  return cross_entropy(logits, labels);
}

struct TrainOptions {
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  Objective objective = Objective::classification;
  double box_weight = 1.0;
  bool shuffle = true;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
  double samples_per_sec = 0.0;
};

namespace detail {

inline void check_input(const Graph<float>& g, const Dataset& ds, std::size_t batch_index) {
  if (ds.channels != g.input.channels || ds.height != g.input.height || ds.width != g.input.width) {
    throw DataError("batch " + std::to_string(batch_index) + ": images are " + std::to_string(ds.channels) + "x" +
                    std::to_string(ds.height) + "x" + std::to_string(ds.width) + ", model expects " +
                    std::to_string(g.input.channels) + "x" + std::to_string(g.input.height) + "x" +
                    std::to_string(g.input.width));
  }
}

}  // namespace detail

/// One pass over the data: forward (train mode) -> loss -> backward ->
/// optimizer step per batch. Deterministic in (seed, epoch, data order).
inline EpochStats train_epoch(Graph<float>& g, const Dataset& ds, OptimState& optim, const TrainOptions& opt,
                              std::size_t epoch) {
  if (opt.batch == 0) throw ConfigError("batch size must be positive");
  if (ds.size() == 0) throw DataError("training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (opt.shuffle) Rng(opt.seed, 0x0DE5).split(epoch).shuffle(order);

  double loss_sum = 0.0;
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < order.size(); start += opt.batch, ++batch_index) {
    detail::check_input(g, ds, batch_index);
    const std::size_t end = std::min(order.size(), start + opt.batch);
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    std::vector<DetectionTarget> targets;
    for (auto i : idx) targets.push_back(ds.targets[i]);

    ForwardOptions fo;
    fo.mode = layers::Mode::train;
    fo.dropout_seed = opt.seed;
    fo.dropout_stream = (static_cast<std::uint64_t>(epoch) << 32) | batch_index;
    g.forward(ds.batch<float>(idx), fo);
    const LossResult<float> lr = objective_loss(opt.objective, g.logits(), targets, ds.classes, opt.box_weight);
    loss_sum += static_cast<double>(lr.loss) * static_cast<double>(idx.size());
    const BackwardResult<float> br = g.backward(lr.grad);
    optimizer_step(g.params, br.params, optim);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EpochStats st;
  st.epoch = epoch;
  st.mean_loss = loss_sum / static_cast<double>(ds.size());
  st.wall_seconds = secs;
  st.samples_per_sec = secs > 0.0 ? static_cast<double>(ds.size()) / secs : 0.0;
  return st;
}

struct EvalOutput {
  std::vector<int> labels;
  std::vector<BBox> boxes;  // detection only
  double mean_loss = 0.0;
};

/// Inference-mode predictions in dataset order.
inline EvalOutput predict(Graph<float>& g, const Dataset& ds, Objective obj, std::size_t batch = 32,
                          double box_weight = 1.0) {
  EvalOutput out;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < ds.size(); start += batch, ++batch_index) {
    detail::check_input(g, ds, batch_index);
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    g.forward(ds.batch<float>(idx), ForwardOptions{});
    const Tensor<float>& z = g.logits();
    std::vector<DetectionTarget> targets;
    for (auto i : idx) targets.push_back(ds.targets[i]);
    loss_sum += static_cast<double>(objective_loss(obj, z, targets, ds.classes, box_weight).loss) *
                static_cast<double>(idx.size());
    const std::size_t D = z.shape().c;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const float* row = z.data() + b * D;
      std::size_t best = 0;
      for (std::size_t c = 1; c < ds.classes; ++c)
        if (row[c] > row[best]) best = c;
      out.labels.push_back(static_cast<int>(best));
      if (obj == Objective::detection) {
        const std::size_t C = ds.classes;
        out.boxes.push_back(BBox{row[C], row[C + 1], row[C + 2], row[C + 3]});
      }
    }
  }
  out.mean_loss = ds.size() ? loss_sum / static_cast<double>(ds.size()) : 0.0;
  return out;
}

}  // namespace cnnzoo
