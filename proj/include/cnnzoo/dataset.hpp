#pragma once

// In-memory datasets and the deterministic synthetic generators that stand in
// for real image collections.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnnzoo/bbox.hpp"
#include "cnnzoo/errors.hpp"
#include "cnnzoo/losses.hpp"
#include "cnnzoo/rng.hpp"
#include "cnnzoo/tensor.hpp"

namespace cnnzoo {

struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<float> pixels;  // sample-major, each image c*h*w in [0,1]
  std::vector<DetectionTarget> targets;

  std::size_t size() const noexcept { return targets.size(); }
  std::size_t image_size() const noexcept { return channels * height * width; }
  Shape image_shape() const { return Shape{1, channels, height, width}; }

  std::span<const float> image(std::size_t i) const { return {pixels.data() + i * image_size(), image_size()}; }
  std::span<float> image(std::size_t i) { return {pixels.data() + i * image_size(), image_size()}; }

  void push(std::span<const float> img, DetectionTarget t) {
    if (img.size() != image_size()) throw DataError("dataset: image size mismatch");
    pixels.insert(pixels.end(), img.begin(), img.end());
    targets.push_back(t);
  }

  template <typename T>
  Tensor<T> batch(std::span<const std::size_t> idx) const {
    Tensor<T> x(Shape{idx.size(), channels, height, width});
    const std::size_t sz = image_size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const float* src = pixels.data() + idx[b] * sz;
      std::transform(src, src + sz, x.data() + b * sz, [](float v) { return static_cast<T>(v); });
    }
    return x;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& t : targets) out.push_back(t.label);
    return out;
  }
};

enum class Split : std::uint64_t { train = 0, eval = 1 };

/// Anchor colour of class k: points on a circle in the plane orthogonal to
/// grey, so per-image mean colour separates the classes linearly.
inline std::array<double, 3> class_color(std::size_t k, std::size_t classes) {
  const double theta = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
  constexpr double r = 0.2;
  return {0.5 + r * std::cos(theta), 0.5 + r * std::cos(theta - 2.0 * std::numbers::pi / 3.0),
          0.5 + r * std::cos(theta + 2.0 * std::numbers::pi / 3.0)};
}

/// Class k: anchor colour plus a zero-mean stripe texture whose frequency
/// and orientation depend on k, additive Gaussian noise and a grey-level
/// brightness jitter. Sample i of a split is a pure function of (seed, split, i).
inline Dataset gen_synthetic_classification(std::size_t classes, std::size_t samples_per_class,
                                            std::size_t resolution, std::uint64_t seed,
                                            Split split = Split::train) {
  if (classes < 2 || classes > 36) throw ConfigError("synthetic classification: classes must lie in [2, 36]");
  if (resolution < 32) throw ConfigError("synthetic classification: resolution must be at least 32");
  Dataset ds;
  ds.height = ds.width = resolution;
  ds.classes = classes;
  ds.pixels.reserve(classes * samples_per_class * ds.image_size());
  const Rng root = Rng(seed, 0xC1A55).split(static_cast<std::uint64_t>(split));
  std::vector<float> img(ds.image_size());
  const std::size_t R = resolution;
  for (std::size_t i = 0; i < classes * samples_per_class; ++i) {
    const std::size_t k = i % classes;
    Rng rng = root.split(i);
    const auto col = class_color(k, classes);
    const double cycles = static_cast<double>(2 + k % 5);
    const bool vertical = (k / 5) % 2 == 1;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double jitter = rng.uniform(-0.02, 0.02);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < R; ++y)
        for (std::size_t x = 0; x < R; ++x) {
          const double t = static_cast<double>(vertical ? y : x) / static_cast<double>(R);
          const double stripe = 0.12 * std::sin(2.0 * std::numbers::pi * cycles * t + phase);
          const double v = col[c] + stripe + jitter + 0.06 * rng.normal();
          img[(c * R + y) * R + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    ds.push(img, DetectionTarget{static_cast<int>(k), std::nullopt});
  }
  return ds;
}

/// Box in pixel units [x0, x1) x [y0, y1) -> normalized corners.
inline BBox pixel_box(std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1, std::size_t R) {
  const double r = static_cast<double>(R);
  return {static_cast<double>(x0) / r, static_cast<double>(y0) / r, static_cast<double>(x1) / r,
          static_cast<double>(y1) / r};
}

/// Pixel rectangle covered by a normalized box: [floor(x1 R), ceil(x2 R)).
struct PixelRect {
  std::size_t x0, y0, x1, y1;
};
inline PixelRect box_pixels(const BBox& b, std::size_t R) {
  const double r = static_cast<double>(R);
  auto lo = [&](double v) { return static_cast<std::size_t>(std::clamp(std::floor(v * r), 0.0, r)); };
  auto hi = [&](double v) { return static_cast<std::size_t>(std::clamp(std::ceil(v * r), 0.0, r)); };
  return {lo(b.x1), lo(b.y1), hi(b.x2), hi(b.y2)};
}

/// Label 0 is background (noise only, no box). Labels 1..classes-1 carry one
/// high-contrast rectangle with a class-dependent texture and its box.
/// Exactly round(background_fraction * samples) samples are background.
inline Dataset gen_synthetic_detection(std::size_t samples, double background_fraction, std::size_t resolution,
                                       std::uint64_t seed, std::size_t classes = 2, Split split = Split::train) {
  if (!(background_fraction >= 0.0 && background_fraction < 1.0)) {
    throw ConfigError("synthetic detection: background_fraction must lie in [0, 1)");
  }
  if (resolution < 16) throw ConfigError("synthetic detection: resolution must be at least 16");
  if (classes < 2 || classes > 36) throw ConfigError("synthetic detection: classes must lie in [2, 36]");
  Dataset ds;
  ds.height = ds.width = resolution;
  ds.classes = classes;
  const Rng root = Rng(seed, 0xDE7EC7).split(static_cast<std::uint64_t>(split));

  std::vector<std::size_t> order(samples);
  for (std::size_t i = 0; i < samples; ++i) order[i] = i;
  Rng perm = root.split(0xFFFFFFFFull);
  perm.shuffle(order);
  const auto n_bg = static_cast<std::size_t>(std::llround(background_fraction * static_cast<double>(samples)));
  std::vector<bool> background(samples, false);
  for (std::size_t i = 0; i < n_bg; ++i) background[order[i]] = true;

  const std::size_t R = resolution;
  std::vector<float> img(ds.image_size());
  for (std::size_t i = 0; i < samples; ++i) {
    Rng rng = root.split(i);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < R * R; ++p)
        img[c * R * R + p] = static_cast<float>(std::clamp(0.25 + 0.08 * rng.normal(), 0.0, 1.0));
    if (background[i]) {
      ds.push(img, DetectionTarget{0, std::nullopt});
      continue;
    }
    const int label = 1 + static_cast<int>(rng.below(classes - 1));
    const auto lo = static_cast<std::size_t>(std::max<double>(2.0, 0.3 * static_cast<double>(R)));
    const auto hi = static_cast<std::size_t>(0.65 * static_cast<double>(R));
    const std::size_t bw = lo + rng.below(hi - lo + 1);
    const std::size_t bh = lo + rng.below(hi - lo + 1);
    const std::size_t x0 = rng.below(R - bw + 1);
    const std::size_t y0 = rng.below(R - bh + 1);
    const auto col = class_color(static_cast<std::size_t>(label), classes);
    const std::size_t period = 2 + static_cast<std::size_t>(label) % 3;
    for (std::size_t y = y0; y < y0 + bh; ++y)
      for (std::size_t x = x0; x < x0 + bw; ++x) {
        const bool bright = ((x - x0) / period + (y - y0) / period) % 2 == 0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = (bright ? 0.95 : 0.7) * (0.6 + 0.8 * (col[c] - 0.3)) + 0.03 * rng.normal();
          img[(c * R + y) * R + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    ds.push(img, DetectionTarget{label, pixel_box(x0, y0, x0 + bw, y0 + bh, R)});
  }
  return ds;
}

}  // namespace cnnzoo
