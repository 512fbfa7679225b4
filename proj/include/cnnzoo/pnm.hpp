#pragma once

// Binary PGM (P5) / PPM (P6) images with maxval 255.

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>

#include "cnnzoo/errors.hpp"
#include "cnnzoo/tensor.hpp"
#include "cnnzoo/tensor_file.hpp"

namespace cnnzoo {

namespace detail {

// Header integer after whitespace and '#' comments.
inline std::size_t pnm_header_int(std::string_view s, std::size_t& pos) {
  for (;;) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos < s.size() && s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  std::size_t v = 0;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
    v = v * 10 + static_cast<std::size_t>(s[pos] - '0');
    if (v > (1u << 24)) throw FormatError("header value too large", start);
    ++pos;
  }
  if (pos == start) throw FormatError("expected header integer", start);
  return v;
}

}  // namespace detail

inline Tensor<float> decode_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("unsupported magic (need P5 or P6)", 0);
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const std::size_t w = detail::pnm_header_int(bytes, pos);
  const std::size_t h = detail::pnm_header_int(bytes, pos);
  const std::size_t maxval_at = pos;
  const std::size_t maxval = detail::pnm_header_int(bytes, pos);
  if (maxval != 255) throw FormatError("unsupported maxval " + std::to_string(maxval), maxval_at);
  if (w == 0 || h == 0) throw FormatError("zero image extent", maxval_at);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("missing whitespace after header", pos);
  }
  ++pos;
  const std::size_t need = w * h * channels;
  if (bytes.size() - pos < need) throw FormatError("truncated pixel data", bytes.size());
  Tensor<float> t(Shape{1, channels, h, w});
  // File order is interleaved (row, column, channel); tensors are planar.
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const auto p = static_cast<unsigned char>(bytes[pos + (y * w + x) * channels + c]);
        t.at(0, c, y, x) = static_cast<float>(p) / 255.0f;
      }
  return t;
}

inline Tensor<float> read_image_pnm(const std::string& path) { return decode_pnm(read_file_bytes(path)); }

/// Nearest neighbour: output (i, j) takes input (floor(i*H/h), floor(j*W/w)).
inline Tensor<float> resize_nearest(const Tensor<float>& img, std::size_t h, std::size_t w) {
  const Shape& s = img.shape();
  if (h == 0 || w == 0) throw ShapeError("resize target must be positive");
  Tensor<float> out(Shape{s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) out.at(n, c, i, j) = img.at(n, c, i * s.h / h, j * s.w / w);
  return out;
}

/// Encodes sample 0 of a 1- or 3-channel tensor, mapping [0,1] to round(v*255).
inline std::string encode_pnm(const Tensor<float>& img) {
  const Shape& s = img.shape();
  if (s.c != 1 && s.c != 3) throw ShapeError("PNM needs 1 or 3 channels, got " + std::to_string(s.c));
  std::string out = (s.c == 1 ? "P5\n" : "P6\n") + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < s.c; ++c) {
        const float v = std::clamp(img.at(0, c, y, x), 0.0f, 1.0f);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
      }
  return out;
}

inline void write_image_pnm(const std::string& path, const Tensor<float>& img) {
  const std::string bytes = encode_pnm(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace cnnzoo
