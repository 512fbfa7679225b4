#pragma once

// Whole-model builders. All channel counts pass through a width multiplier;
// at width 1 the graphs are the full-size architectures.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cnnzoo/blocks.hpp"
#include "cnnzoo/errors.hpp"
#include "cnnzoo/graph.hpp"
#include "cnnzoo/rng.hpp"

namespace cnnzoo {

enum class ModelKind {
  custom_cnn,
  variant_a,
  variant_b,
  evolved_baseline,
  enhanced_baseline,
  mini_yolo,
  transfer_head,
};

inline constexpr std::string_view kModelNames[] = {
    "custom_cnn", "variant_a", "variant_b", "evolved_baseline", "enhanced_baseline", "mini_yolo", "transfer_head",
};

inline std::string_view to_string(ModelKind k) { return kModelNames[static_cast<std::size_t>(k)]; }

inline std::optional<ModelKind> parse_model(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kModelNames); ++i)
    if (kModelNames[i] == name) return static_cast<ModelKind>(i);
  return std::nullopt;
}

struct ModelConfig {
  ModelKind kind = ModelKind::evolved_baseline;
  std::size_t classes = 2;
  double width = 1.0;
  InputSpec input{};
  std::size_t feature_dim = 1280;  // transfer_head only
  double dropout_rate = 0.2;       // transfer_head only
  double leaky_slope = 0.1;        // mini_yolo only

  void check() const {
    if (classes < 2) throw ConfigError("classes must be at least 2, got " + std::to_string(classes));
    if (!(width > 0.0 && width <= 1.0)) throw ConfigError("width multiplier must lie in (0, 1]");
    if (kind == ModelKind::transfer_head && feature_dim == 0) throw ConfigError("feature_dim must be positive");
  }

  std::size_t scaled(std::size_t c) const {
    const auto r = static_cast<long long>(std::llround(width * static_cast<double>(c)));
    return static_cast<std::size_t>(r < 1 ? 1 : r);
  }

  /// Bottleneck widths stay multiples of 4 so the mid width is exact.
  std::size_t scaled_bottleneck(std::size_t c) const {
    const auto r = static_cast<long long>(std::llround(width * static_cast<double>(c) / 4.0));
    return 4 * static_cast<std::size_t>(r < 1 ? 1 : r);
  }

  /// Output vector length: classes, plus four box coordinates for the detector.
  std::size_t output_dim() const { return kind == ModelKind::mini_yolo ? classes + 4 : classes; }
};

namespace detail {

template <typename T>
int stem_three_conv(GraphBuilder<T>& b, const ModelConfig& cfg) {
  int x = b.conv("stem.conv1", kGraphInput, cfg.scaled(32), 3, 2, 1, false);
  x = b.batch_norm("stem.bn1", x);
  x = b.relu("stem.relu1", x);
  x = b.conv("stem.conv2", x, cfg.scaled(32), 3, 1, 1, false);
  x = b.batch_norm("stem.bn2", x);
  x = b.relu("stem.relu2", x);
  x = b.conv("stem.conv3", x, cfg.scaled(64), 3, 1, 1, false);
  x = b.batch_norm("stem.bn3", x);
  x = b.relu("stem.relu3", x);
  return b.max_pool("stem.pool", x, 3, 2, 1);
}

template <typename T>
int stem_seven(GraphBuilder<T>& b, const ModelConfig& cfg) {
  int x = b.conv("stem.conv", kGraphInput, cfg.scaled(64), 7, 2, 3, false);
  x = b.batch_norm("stem.bn", x);
  x = b.relu("stem.relu", x);
  return b.max_pool("stem.pool", x, 3, 2, 1);
}

/// Four stages of two blocks: 64 (s1, s1), 128/256/512 (s2, s1).
template <typename T>
int four_stage_pairs(GraphBuilder<T>& b, const ModelConfig& cfg, int x, BlockFamily family) {
  const std::size_t widths[] = {64, 128, 256, 512};
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t stride = (s > 0 && k == 0) ? 2 : 1;
      const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(k + 1);
      x = build_block(b, prefix, x, BlockSpec{family, cfg.scaled(widths[s]), stride, false});
    }
  }
  return x;
}

/// Bottleneck stages 3x256, 4x512, 6x1024, 3x2048.
template <typename T>
int bottleneck_stages(GraphBuilder<T>& b, const ModelConfig& cfg, int x) {
  const std::size_t widths[] = {256, 512, 1024, 2048};
  const std::size_t depth[] = {3, 4, 6, 3};
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t k = 0; k < depth[s]; ++k) {
      const std::size_t stride = (s > 0 && k == 0) ? 2 : 1;
      const bool force = (s == 0 && k == 0);
      const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(k + 1);
      x = build_block(b, prefix, x, BlockSpec{BlockFamily::bottleneck, cfg.scaled_bottleneck(widths[s]), stride, force});
    }
  }
  return x;
}

template <typename T>
int mini_yolo_body(GraphBuilder<T>& b, const ModelConfig& cfg) {
  int x = kGraphInput;
  const std::size_t filters[] = {16, 32, 64, 128};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string p = "backbone.conv" + std::to_string(i + 1);
    x = b.conv(p, x, cfg.scaled(filters[i]), 3, 1, 1, true);
    x = b.leaky_relu(p + "_act", x, cfg.leaky_slope);
    if (i < 3) x = b.max_pool("backbone.pool" + std::to_string(i + 1), x, 2, 2, 0);
  }
  return b.adaptive_avg_pool("backbone.adaptive_pool", x, 1, 1);
}

/// Feature extractor of a classification/detection model (no head).
template <typename T>
int build_body(GraphBuilder<T>& b, const ModelConfig& cfg, ModelKind kind) {
  switch (kind) {
    case ModelKind::custom_cnn: return four_stage_pairs(b, cfg, stem_three_conv(b, cfg), BlockFamily::ds_residual);
    case ModelKind::variant_a:
      return four_stage_pairs(b, cfg, stem_three_conv(b, cfg), BlockFamily::standard_residual);
    case ModelKind::variant_b:
    case ModelKind::evolved_baseline:
      return four_stage_pairs(b, cfg, stem_seven(b, cfg), BlockFamily::standard_residual);
    case ModelKind::enhanced_baseline: return bottleneck_stages(b, cfg, stem_seven(b, cfg));
    case ModelKind::mini_yolo: return mini_yolo_body(b, cfg);
    case ModelKind::transfer_head: return kGraphInput;
  }
  return kGraphInput;
}

template <typename T>
Graph<T> classifier(const ModelConfig& cfg, bool hidden_fc) {
  cfg.check();
  GraphBuilder<T> b(std::string(to_string(cfg.kind)), cfg.input);
  int x = build_body(b, cfg, cfg.kind);
  x = b.global_avg_pool("head.gap", x);
  if (hidden_fc) {
    x = b.fully_connected("head.fc1", x, cfg.scaled(128));
    x = b.relu("head.relu", x);
    x = b.fully_connected("head.fc2", x, cfg.classes);
  } else {
    x = b.fully_connected("head.fc", x, cfg.classes);
  }
  const int logits = x;
  b.softmax("head.softmax", x);
  return b.finish(logits, cfg.classes);
}

}  // namespace detail

template <typename T = float>
Graph<T> build_custom_cnn(ModelConfig cfg) {
  cfg.kind = ModelKind::custom_cnn;
  return detail::classifier<T>(cfg, true);
}

template <typename T = float>
Graph<T> build_variant_a(ModelConfig cfg) {
  cfg.kind = ModelKind::variant_a;
  return detail::classifier<T>(cfg, true);
}

template <typename T = float>
Graph<T> build_variant_b(ModelConfig cfg) {
  cfg.kind = ModelKind::variant_b;
  return detail::classifier<T>(cfg, true);
}

template <typename T = float>
Graph<T> build_evolved_baseline(ModelConfig cfg) {
  cfg.kind = ModelKind::evolved_baseline;
  return detail::classifier<T>(cfg, false);
}

template <typename T = float>
Graph<T> build_enhanced_baseline(ModelConfig cfg) {
  cfg.kind = ModelKind::enhanced_baseline;
  return detail::classifier<T>(cfg, false);
}

/// Single-box detector: output is [class logits..., x1, y1, x2, y2].
template <typename T = float>
Graph<T> build_mini_yolo(ModelConfig cfg) {
  cfg.kind = ModelKind::mini_yolo;
  cfg.check();
  GraphBuilder<T> b("mini_yolo", cfg.input);
  const int feat = detail::mini_yolo_body(b, cfg);
  const int out = b.fully_connected("head.fc", feat, cfg.classes + 4);
  return b.finish(out, cfg.classes + 4);
}

/// GAP -> dropout -> FC -> softmax over a feature map of `feature_dim`
/// channels. When `backbone` is given, the head is appended to that model's
/// feature extractor and every backbone parameter is frozen.
template <typename T = float>
Graph<T> build_transfer_head(ModelConfig cfg, std::optional<ModelKind> backbone = std::nullopt) {
  cfg.check();
  InputSpec in = cfg.input;
  if (!backbone) {
    in.channels = cfg.feature_dim;
    if (in.height == 224 && in.width == 224) in.height = in.width = 7;
  }
  GraphBuilder<T> b("transfer_head", in);
  int x = kGraphInput;
  if (backbone) {
    if (*backbone == ModelKind::transfer_head) throw ConfigError("transfer head cannot be its own backbone");
    x = detail::build_body(b, cfg, *backbone);
    for (auto& e : b.graph().params.entries())
      if (e.kind == EntryKind::parameter) e.trainable = false;
  }
  x = b.global_avg_pool("head.gap", x);
  x = b.dropout("head.dropout", x, cfg.dropout_rate);
  x = b.fully_connected("head.fc", x, cfg.classes);
  const int logits = x;
  b.softmax("head.softmax", x);
  cfg.kind = ModelKind::transfer_head;
  return b.finish(logits, cfg.classes);
}

template <typename T = float>
Graph<T> build_model(const ModelConfig& cfg) {
  switch (cfg.kind) {
    case ModelKind::custom_cnn: return build_custom_cnn<T>(cfg);
    case ModelKind::variant_a: return build_variant_a<T>(cfg);
    case ModelKind::variant_b: return build_variant_b<T>(cfg);
    case ModelKind::evolved_baseline: return build_evolved_baseline<T>(cfg);
    case ModelKind::enhanced_baseline: return build_enhanced_baseline<T>(cfg);
    case ModelKind::mini_yolo: return build_mini_yolo<T>(cfg);
    case ModelKind::transfer_head: return build_transfer_head<T>(cfg);
  }
  throw ConfigError("unknown model");
}

/// He-normal weights (fan-in), zero biases, BN gamma=1 / beta=0, running
/// statistics reset. Each entry draws from its own stream.
template <typename T>
void init_params(Graph<T>& g, std::uint64_t seed) {
  std::size_t idx = 0;
  for (auto& e : g.params.entries()) {
    Rng rng = Rng(seed, 0x1A17).split(idx++);
    const std::string& n = e.name;
    auto ends_with = [&](std::string_view suf) {
      return n.size() >= suf.size() && n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with(".weight")) {
      const Shape& s = e.value.shape();
      const double fan_in = static_cast<double>(s.c * s.h * s.w);
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& v : e.value.values()) v = static_cast<T>(sd * rng.normal());
    } else if (ends_with(".gamma") || ends_with(".running_var")) {
      e.value.fill(T(1));
    } else {
      e.value.fill(T(0));
    }
  }
}

}  // namespace cnnzoo
