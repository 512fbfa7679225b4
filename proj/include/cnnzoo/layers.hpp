#pragma once

// Forward and backward kernels for the fixed layer vocabulary. Every function
// here is a pure function of its arguments; the graph owns the tape.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "cnnzoo/errors.hpp"
#include "cnnzoo/rng.hpp"
#include "cnnzoo/tensor.hpp"

namespace cnnzoo::layers {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM). weight: (cout, cin, kh, kw); bias: (cout,1,1,1).

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 std::size_t stride, std::size_t pad, const std::string& name = "conv2d") {
  require_nonempty(x.shape(), name);
  const Shape& ws = weight.shape();
  if (x.shape().c != ws.c) {
    throw ShapeError(name + ": expected " + std::to_string(ws.c) + " input channels, got " +
                     std::to_string(x.shape().c));
  }
  const Window win{ws.h, ws.w, stride, pad};
  const auto [oh, ow] = window_output(x.shape(), win);
  const Matrix<T> cols = im2col(x, win);
  const std::size_t plane = oh * ow;
  const std::size_t batch = x.shape().n;
  std::vector<T> outm(ws.n * cols.cols, T(0));
  gemm(Trans::no, Trans::no, ws.n, cols.cols, cols.rows, weight.data(), cols.data.data(), outm.data());

  Tensor<T> y(Shape{batch, ws.n, oh, ow});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < ws.n; ++co) {
      const T b = bias ? (*bias)[co] : T(0);
      const T* src = &outm[co * cols.cols + n * plane];
      T* dst = &y.data()[(n * ws.n + co) * plane];
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
  return y;
}

/// Accumulates into dw/db; writes dx when non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t pad,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const Shape& ws = weight.shape();
  const Window win{ws.h, ws.w, stride, pad};
  const std::size_t batch = x.shape().n;
  const std::size_t plane = dy.shape().spatial();
  const std::size_t ncols = batch * plane;

  std::vector<T> dym(ws.n * ncols);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < ws.n; ++co) {
      const T* src = &dy.data()[(n * ws.n + co) * plane];
      T* dst = &dym[co * ncols + n * plane];
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p];
    }

  if (db) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      T s = T(0);
      for (std::size_t j = 0; j < ncols; ++j) s += dym[co * ncols + j];
      (*db)[co] += s;
    }
  }
  if (dw) {
    const Matrix<T> cols = im2col(x, win);
    gemm(Trans::no, Trans::yes, ws.n, cols.rows, ncols, dym.data(), cols.data.data(), dw->data());
  }
  if (dx) {
    Matrix<T> dcols(ws.c * ws.h * ws.w, ncols);
    gemm(Trans::yes, Trans::no, dcols.rows, ncols, ws.n, weight.data(), dym.data(), dcols.data.data());
    *dx = col2im(dcols, x.shape(), win);
  }
}

// ---------------------------------------------------------------------------
// Depthwise convolution. weight: (c, 1, kh, kw).

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride,
                           std::size_t pad, const std::string& name = "depthwise_conv2d") {
  require_nonempty(x.shape(), name);
  const Shape& s = x.shape();
  const Shape& ws = weight.shape();
  if (ws.n != s.c || ws.c != 1) {
    throw ShapeError(name + ": expected " + std::to_string(ws.n) + " input channels, got " +
                     std::to_string(s.c));
  }
  const Window win{ws.h, ws.w, stride, pad};
  const auto [oh, ow] = window_output(s, win);
  Tensor<T> y(Shape{s.n, s.c, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* k = &weight.data()[c * ws.h * ws.w];
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          T acc = T(0);
          for (std::size_t u = 0; u < ws.h; ++u) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(pad);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t v = 0; v < ws.w; ++v) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * stride + v) - static_cast<std::ptrdiff_t>(pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(s.w)) continue;
              acc += k[u * ws.w + v] * x.at(n, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
          }
          y.at(n, c, i, j) = acc;
        }
    }
  return y;
}

template <typename T>
void depthwise_conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride,
                               std::size_t pad, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw) {
  const Shape& s = x.shape();
  const Shape& ws = weight.shape();
  const std::size_t oh = dy.shape().h;
  const std::size_t ow = dy.shape().w;
  if (dx) *dx = Tensor<T>(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* k = &weight.data()[c * ws.h * ws.w];
      T* dk = dw ? &dw->data()[c * ws.h * ws.w] : nullptr;
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const T g = dy.at(n, c, i, j);
          for (std::size_t u = 0; u < ws.h; ++u) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(pad);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t v = 0; v < ws.w; ++v) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * stride + v) - static_cast<std::ptrdiff_t>(pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(s.w)) continue;
              const auto yi = static_cast<std::size_t>(yy);
              const auto xi = static_cast<std::size_t>(xx);
              if (dk) dk[u * ws.w + v] += g * x.at(n, c, yi, xi);
              if (dx) dx->at(n, c, yi, xi) += g * k[u * ws.w + v];
            }
          }
        }
    }
}

// ---------------------------------------------------------------------------
// Batch normalization over (n, h, w) per channel.

template <typename T>
struct BatchNormCache {
  std::vector<T> invstd;
  Tensor<T> xhat;
};

struct BatchNormConfig {
  double eps = 1e-5;
  double momentum = 0.9;
};

inline void check_bn_config(const BatchNormConfig& cfg) {
  if (!(cfg.eps > 0.0)) throw ConfigError("batch_norm: eps must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum > 1.0) throw ConfigError("batch_norm: momentum must lie in [0,1]");
}

/// Train mode normalises with batch statistics (biased variance) and blends
/// them into the running buffers as running = m*running + (1-m)*batch.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     const BatchNormConfig& cfg, BatchNormCache<T>* cache = nullptr,
                     const std::string& name = "batch_norm") {
  check_bn_config(cfg);
  require_nonempty(x.shape(), name);
  const Shape& s = x.shape();
  if (gamma.size() != s.c || beta.size() != s.c || running_mean.size() != s.c || running_var.size() != s.c) {
    throw ShapeError(name + ": per-channel vectors must have extent " + std::to_string(s.c));
  }
  const std::size_t plane = s.spatial();
  const T count = static_cast<T>(s.n * plane);
  const T eps = static_cast<T>(cfg.eps);
  const T mom = static_cast<T>(cfg.momentum);
  Tensor<T> y(s);
  BatchNormCache<T> local;
  BatchNormCache<T>& c = cache ? *cache : local;
  c.invstd.assign(s.c, T(0));
  c.xhat = Tensor<T>(s);
  for (std::size_t ch = 0; ch < s.c; ++ch) {
    T mean;
    T var;
    if (mode == Mode::train) {
      T sum = T(0);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = &x.data()[(n * s.c + ch) * plane];
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / count;
      T sq = T(0);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = &x.data()[(n * s.c + ch) * plane];
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / count;
      running_mean[ch] = mom * running_mean[ch] + (T(1) - mom) * mean;
      running_var[ch] = mom * running_var[ch] + (T(1) - mom) * var;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const T inv = T(1) / std::sqrt(var + eps);
    c.invstd[ch] = inv;
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (x[base + i] - mean) * inv;
        c.xhat[base + i] = xh;
        y[base + i] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  return y;
}

template <typename T>
void batch_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache,
                         Mode mode, Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta) {
  const Shape& s = dy.shape();
  const std::size_t plane = s.spatial();
  const T count = static_cast<T>(s.n * plane);
  if (dx) *dx = Tensor<T>(s);
  for (std::size_t ch = 0; ch < s.c; ++ch) {
    T sum_dy = T(0);
    T sum_dy_xhat = T(0);
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[base + i];
        sum_dy_xhat += dy[base + i] * cache.xhat[base + i];
      }
    }
    if (dgamma) (*dgamma)[ch] += sum_dy_xhat;
    if (dbeta) (*dbeta)[ch] += sum_dy;
    if (!dx) continue;
    const T k = gamma[ch] * cache.invstd[ch];
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (mode == Mode::train) {
          (*dx)[base + i] = k * (dy[base + i] - sum_dy / count - cache.xhat[base + i] * sum_dy_xhat / count);
        } else {
          (*dx)[base + i] = k * dy[base + i];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
  Tensor<T> y = x;
  const T a = static_cast<T>(slope);
  for (auto& v : y.values()) v = v >= T(0) ? v : a * v;
  return y;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& dy, double slope) {
  Tensor<T> dx(x.shape());
  const T a = static_cast<T>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] >= T(0) ? dy[i] : a * dy[i];
  return dx;
}

/// Per-sample softmax over channels; spatial extents must be 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, const std::string& name = "softmax") {
  const Shape& s = x.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError(name + ": softmax needs h=w=1, got " + s.str());
  Tensor<T> y(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* in = &x.data()[n * s.c];
    T* out = &y.data()[n * s.c];
    T mx = in[0];
    for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, in[c]);
    T sum = T(0);
    for (std::size_t c = 0; c < s.c; ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += out[c];
    }
    for (std::size_t c = 0; c < s.c; ++c) out[c] /= sum;
  }
  return y;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  const Shape& s = y.shape();
  Tensor<T> dx(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    T dot = T(0);
    for (std::size_t c = 0; c < s.c; ++c) dot += dy[n * s.c + c] * y[n * s.c + c];
    for (std::size_t c = 0; c < s.c; ++c) dx[n * s.c + c] = y[n * s.c + c] * (dy[n * s.c + c] - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling

/// Max over each window; padding cells behave as -inf. `argmax` receives the
/// flat input offset of every output cell (first maximum in row-major order).
template <typename T>
Tensor<T> max_pool(const Tensor<T>& x, const Window& win, std::vector<std::size_t>* argmax = nullptr,
                   const std::string& name = "max_pool") {
  require_nonempty(x.shape(), name);
  const Shape& s = x.shape();
  const auto [oh, ow] = window_output(s, win);
  Tensor<T> y(Shape{s.n, s.c, oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_at = std::numeric_limits<std::size_t>::max();
          for (std::size_t u = 0; u < win.kh; ++u) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(i * win.stride + u) - static_cast<std::ptrdiff_t>(win.pad);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t v = 0; v < win.kw; ++v) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * win.stride + v) - static_cast<std::ptrdiff_t>(win.pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(s.w)) continue;
              const std::size_t off = x.offset(n, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
              if (best_at == std::numeric_limits<std::size_t>::max() || x[off] > best) {
                best = x[off];
                best_at = off;
              }
            }
          }
          if (best_at == std::numeric_limits<std::size_t>::max()) {
            throw ShapeError(name + ": window lies entirely in padding");
          }
          const std::size_t o = y.offset(n, c, i, j);
          y[o] = best;
          if (argmax) (*argmax)[o] = best_at;
        }
  return y;
}

template <typename T>
Tensor<T> max_pool_backward(const Shape& in, const std::vector<std::size_t>& argmax, const Tensor<T>& dy) {
  Tensor<T> dx(in);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_nonempty(x.shape(), "global_avg_pool");
  return reduce(x, Axis::h | Axis::w, ReduceKind::mean);
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& in, const Tensor<T>& dy) {
  Tensor<T> dx(in);
  const std::size_t plane = in.spatial();
  const T scale = T(1) / static_cast<T>(plane);
  for (std::size_t nc = 0; nc < in.n * in.c; ++nc)
    for (std::size_t p = 0; p < plane; ++p) dx[nc * plane + p] = dy[nc] * scale;
  return dx;
}

/// Output cell i covers input rows [floor(i*h/th), floor((i+1)*h/th)).
inline std::pair<std::size_t, std::size_t> adaptive_region(std::size_t i, std::size_t in, std::size_t out) {
  return {i * in / out, (i + 1) * in / out};
}

inline void check_adaptive_target(const Shape& s, std::size_t th, std::size_t tw) {
  if (th == 0 || tw == 0 || th > s.h || tw > s.w) {
    throw ShapeError("adaptive_avg_pool: target " + std::to_string(th) + "x" + std::to_string(tw) +
                     " does not fit input " + s.str());
  }
}

template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t th, std::size_t tw) {
  require_nonempty(x.shape(), "adaptive_avg_pool");
  const Shape& s = x.shape();
  check_adaptive_target(s, th, tw);
  Tensor<T> y(Shape{s.n, s.c, th, tw});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t j = 0; j < tw; ++j) {
          const auto [r0, r1] = adaptive_region(i, s.h, th);
          const auto [c0, c1] = adaptive_region(j, s.w, tw);
          T acc = T(0);
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t q = c0; q < c1; ++q) acc += x.at(n, c, r, q);
          y.at(n, c, i, j) = acc / static_cast<T>((r1 - r0) * (c1 - c0));
        }
  return y;
}

template <typename T>
Tensor<T> adaptive_avg_pool_backward(const Shape& in, const Tensor<T>& dy) {
  const std::size_t th = dy.shape().h;
  const std::size_t tw = dy.shape().w;
  Tensor<T> dx(in);
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t j = 0; j < tw; ++j) {
          const auto [r0, r1] = adaptive_region(i, in.h, th);
          const auto [c0, c1] = adaptive_region(j, in.w, tw);
          const T g = dy.at(n, c, i, j) / static_cast<T>((r1 - r0) * (c1 - c0));
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t q = c0; q < c1; ++q) dx.at(n, c, r, q) += g;
        }
  return dx;
}

// ---------------------------------------------------------------------------
// Fully connected. x: (n, in, 1, 1); weight: (out, in, 1, 1); bias: (out,1,1,1).

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                          const std::string& name = "fully_connected") {
  require_nonempty(x.shape(), name);
  const Shape& s = x.shape();
  const std::size_t out = weight.shape().n;
  const std::size_t in = weight.shape().c;
  if (s.h != 1 || s.w != 1 || s.c != in) {
    throw ShapeError(name + ": expected input (n," + std::to_string(in) + ",1,1), got " + s.str());
  }
  Tensor<T> y(Shape{s.n, out, 1, 1});
  gemm(Trans::no, Trans::yes, s.n, out, in, x.data(), weight.data(), y.data());
  if (bias)
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t o = 0; o < out; ++o) y[n * out + o] += (*bias)[o];
  return y;
}

template <typename T>
void fully_connected_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                              Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const std::size_t batch = x.shape().n;
  const std::size_t out = weight.shape().n;
  const std::size_t in = weight.shape().c;
  if (dw) gemm(Trans::yes, Trans::no, out, in, batch, dy.data(), x.data(), dw->data());
  if (db)
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < out; ++o) (*db)[o] += dy[n * out + o];
  if (dx) {
    *dx = Tensor<T>(x.shape());
    gemm(Trans::no, Trans::no, batch, in, out, dy.data(), weight.data(), dx->data());
  }
}

// ---------------------------------------------------------------------------
// Inverted dropout. `mask` receives the per-element scale (0 or 1/(1-rate)).

inline void check_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0,1)");
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng, std::vector<T>* mask = nullptr) {
  check_dropout_rate(rate);
  if (mode == Mode::infer || rate == 0.0) {
    if (mask) mask->assign(x.size(), T(1));
    return x;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> y(x.shape());
  if (mask) mask->resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T m = rng.uniform() < rate ? T(0) : keep_scale;
    y[i] = x[i] * m;
    if (mask) (*mask)[i] = m;
  }
  return y;
}

template <typename T>
Tensor<T> dropout_backward(const std::vector<T>& mask, const Tensor<T>& dy) {
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

}  // namespace cnnzoo::layers
