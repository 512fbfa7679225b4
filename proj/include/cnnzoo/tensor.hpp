#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cnnzoo/errors.hpp"

namespace cnnzoo {

/// Extents of a 4-D tensor in (batch, channels, height, width) order.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t spatial() const noexcept { return h * w; }
  constexpr bool empty() const noexcept { return size() == 0; }
  constexpr std::array<std::size_t, 4> dims() const noexcept { return {n, c, h, w}; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense row-major n->c->h->w array. Scalar is float for training and
/// inference; double is only used by the gradient checker.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length mismatch for shape " + shape_.str() + ": expected " +
                       std::to_string(shape_.size()) + ", got " + std::to_string(data_.size()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[offset(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[offset(n, c, h, w)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, different extents (element count must match).
  Tensor reshaped(Shape s) const& {
    if (s.size() != size()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    }
    Tensor out = *this;
    out.shape_ = s;
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& x) {
  std::vector<To> v(x.size());
  std::transform(x.values().begin(), x.values().end(), v.begin(),
                 [](From f) { return static_cast<To>(f); });
  return Tensor<To>(x.shape(), std::move(v));
}

/// Rejects zero-extent tensors at layer boundaries.
inline void require_nonempty(const Shape& s, const std::string& where) {
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
    throw ShapeError(where + ": zero-extent input " + s.str());
  }
}

// ---------------------------------------------------------------------------
// Reductions

enum class Axis : std::uint8_t { n = 1, c = 2, h = 4, w = 8 };

struct Axes {
  std::uint8_t bits = 0;
  constexpr Axes() = default;
  constexpr Axes(Axis a) : bits(static_cast<std::uint8_t>(a)) {}  // NOLINT
  constexpr bool has(Axis a) const { return (bits & static_cast<std::uint8_t>(a)) != 0; }
  constexpr bool empty() const { return bits == 0; }
  friend constexpr Axes operator|(Axes a, Axes b) {
    Axes r;
    r.bits = static_cast<std::uint8_t>(a.bits | b.bits);
    return r;
  }
};
constexpr Axes operator|(Axis a, Axis b) { return Axes(a) | Axes(b); }

enum class ReduceKind { sum, mean };

template <typename T>
Tensor<T> reduce(const Tensor<T>& x, Axes axes, ReduceKind kind) {
  if (axes.empty()) throw ConfigError("reduce: axes must be non-empty");
  const Shape& s = x.shape();
  Shape out{axes.has(Axis::n) ? 1 : s.n, axes.has(Axis::c) ? 1 : s.c,
            axes.has(Axis::h) ? 1 : s.h, axes.has(Axis::w) ? 1 : s.w};
  Tensor<T> r(out);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t h = 0; h < s.h; ++h)
        for (std::size_t w = 0; w < s.w; ++w)
          r.at(axes.has(Axis::n) ? 0 : n, axes.has(Axis::c) ? 0 : c, axes.has(Axis::h) ? 0 : h,
               axes.has(Axis::w) ? 0 : w) += x.at(n, c, h, w);
  if (kind == ReduceKind::mean && !out.empty()) {
    const T count = static_cast<T>(s.size() / out.size());
    for (auto& v : r.values()) v /= count;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Patch extraction

struct Window {
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// floor((in + 2p - k) / s) + 1, or 0 when the window does not fit.
inline std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ConfigError("stride must be positive");
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

inline std::pair<std::size_t, std::size_t> window_output(const Shape& s, const Window& win) {
  const std::size_t oh = out_extent(s.h, win.kh, win.stride, win.pad);
  const std::size_t ow = out_extent(s.w, win.kw, win.stride, win.pad);
  if (oh == 0 || ow == 0) {
    throw ShapeError("non-positive output extent: oh=" + std::to_string(oh) +
                     " ow=" + std::to_string(ow) + " for input " + s.str());
  }
  return {oh, ow};
}

/// Row-major matrix used as the im2col buffer and for GEMM operands.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Rows index (channel, ky, kx); columns index (sample, oy, ox). Cells that
/// fall in the padding read as zero.
template <typename T>
Matrix<T> im2col(const Tensor<T>& x, const Window& win) {
  const Shape& s = x.shape();
  const auto [oh, ow] = window_output(s, win);
  const std::size_t plane = oh * ow;
  Matrix<T> m(s.c * win.kh * win.kw, s.n * plane);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t u = 0; u < win.kh; ++u)
      for (std::size_t v = 0; v < win.kw; ++v) {
        T* row = &m.data[((c * win.kh + u) * win.kw + v) * m.cols];
        for (std::size_t n = 0; n < s.n; ++n) {
          const T* src = &x.data()[(n * s.c + c) * s.spatial()];
          T* dst = row + n * plane;
          for (std::size_t i = 0; i < oh; ++i) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * win.stride + u) -
                                     static_cast<std::ptrdiff_t>(win.pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t j = 0; j < ow; ++j) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * win.stride + v) -
                                        static_cast<std::ptrdiff_t>(win.pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(s.w)) continue;
              dst[i * ow + j] = src[static_cast<std::size_t>(y) * s.w + static_cast<std::size_t>(xx)];
            }
          }
        }
      }
  return m;
}

/// Adjoint of im2col: scatters (accumulates) columns back into an input-shaped tensor.
template <typename T>
Tensor<T> col2im(const Matrix<T>& m, const Shape& s, const Window& win) {
  const auto [oh, ow] = window_output(s, win);
  const std::size_t plane = oh * ow;
  if (m.rows != s.c * win.kh * win.kw || m.cols != s.n * plane) {
    throw ShapeError("col2im: matrix does not match input shape " + s.str());
  }
  Tensor<T> x(s);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t u = 0; u < win.kh; ++u)
      for (std::size_t v = 0; v < win.kw; ++v) {
        const T* row = &m.data[((c * win.kh + u) * win.kw + v) * m.cols];
        for (std::size_t n = 0; n < s.n; ++n) {
          T* dst = &x.data()[(n * s.c + c) * s.spatial()];
          const T* src = row + n * plane;
          for (std::size_t i = 0; i < oh; ++i) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * win.stride + u) -
                                     static_cast<std::ptrdiff_t>(win.pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t j = 0; j < ow; ++j) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * win.stride + v) -
                                        static_cast<std::ptrdiff_t>(win.pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(s.w)) continue;
              dst[static_cast<std::size_t>(y) * s.w + static_cast<std::size_t>(xx)] += src[i * ow + j];
            }
          }
        }
      }
  return x;
}

// ---------------------------------------------------------------------------
// GEMM: C (M x N) += op(A) * op(B). All operands row-major.

enum class Trans { no, yes };

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B,
          T* C) {
  std::vector<T> bt;
  if (tb == Trans::yes) {
    // B is N x K; materialise K x N so the inner loop is contiguous.
    bt.resize(K * N);
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
    B = bt.data();
  }
  if (ta == Trans::no) {
    for (std::size_t i = 0; i < M; ++i) {
      T* __restrict crow = C + i * N;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[i * K + k];
        if (a == T(0)) continue;
        const T* __restrict brow = B + k * N;
        for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
      }
    }
  } else {
    // A is K x M.
    for (std::size_t k = 0; k < K; ++k) {
      const T* __restrict brow = B + k * N;
      for (std::size_t i = 0; i < M; ++i) {
        const T a = A[k * M + i];
        if (a == T(0)) continue;
        T* __restrict crow = C + i * N;
        for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

}  // namespace cnnzoo
