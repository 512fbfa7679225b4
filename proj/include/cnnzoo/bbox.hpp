#pragma once

#include <algorithm>
#include <array>

namespace cnnzoo {

/// Axis-aligned box in normalized corner coordinates.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  std::array<double, 4> coords() const { return {x1, y1, x2, y2}; }

  /// Orders corners so that x2 >= x1 and y2 >= y1.
  BBox canonical() const { return {std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)}; }

  /// Clamps to the unit square, then canonicalizes (used on raw predictions).
  BBox clamped() const {
    auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
    return BBox{c(x1), c(y1), c(x2), c(y2)}.canonical();
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

}  // namespace cnnzoo
