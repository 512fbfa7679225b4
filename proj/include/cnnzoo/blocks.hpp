#pragma once

// Residual block builders. Each appends its layers to a GraphBuilder and
// returns the index of the block's output node.

#include <cstddef>
#include <string>

#include "cnnzoo/errors.hpp"
#include "cnnzoo/graph.hpp"

namespace cnnzoo {

enum class BlockFamily { ds_residual, standard_residual, bottleneck };

struct BlockSpec {
  BlockFamily family = BlockFamily::standard_residual;
  std::size_t filters = 0;
  std::size_t stride = 1;
  bool force_projection = false;

  void check() const {
    if (filters == 0) throw ConfigError("block: filters must be positive");
    if (stride != 1 && stride != 2) throw ConfigError("block: stride must be 1 or 2");
    if (family == BlockFamily::bottleneck && filters % 4 != 0) {
      throw ConfigError("bottleneck: output dimension " + std::to_string(filters) + " is not divisible by 4");
    }
  }
};

namespace detail {

/// 1x1 projection + BN when shapes differ (or when forced), identity otherwise.
template <typename T>
int shortcut(GraphBuilder<T>& b, const std::string& prefix, int in, std::size_t filters, std::size_t stride,
             bool force) {
  if (!force && b.channels(in) == filters && stride == 1) return in;
  const int proj = b.conv(prefix + ".proj", in, filters, 1, stride, 0, false);
  return b.batch_norm(prefix + ".proj_bn", proj);
}

template <typename T>
int close_block(GraphBuilder<T>& b, const std::string& prefix, int main, int skip) {
  const int sum = b.add(prefix + ".add", main, skip);
  return b.relu(prefix + ".out_relu", sum);
}

}  // namespace detail

/// depthwise 3x3 (stride s) -> BN -> pointwise 1x1 -> BN -> ReLU -> 3x3 conv -> BN,
/// added to the shortcut, then ReLU.
template <typename T>
int build_ds_residual(GraphBuilder<T>& b, const std::string& prefix, int in, std::size_t filters,
                      std::size_t stride) {
  BlockSpec{BlockFamily::ds_residual, filters, stride, false}.check();
  int x = b.depthwise(prefix + ".dw", in, 3, stride, 1);
  x = b.batch_norm(prefix + ".dw_bn", x);
  x = b.conv(prefix + ".pw", x, filters, 1, 1, 0, false);
  x = b.batch_norm(prefix + ".pw_bn", x);
  x = b.relu(prefix + ".pw_relu", x);
  x = b.conv(prefix + ".conv", x, filters, 3, 1, 1, false);
  x = b.batch_norm(prefix + ".conv_bn", x);
  const int skip = detail::shortcut(b, prefix, in, filters, stride, false);
  return detail::close_block(b, prefix, x, skip);
}

/// Two 3x3 convolutions (the first strided) with BN, ReLU between.
template <typename T>
int build_standard_residual(GraphBuilder<T>& b, const std::string& prefix, int in, std::size_t filters,
                            std::size_t stride) {
  BlockSpec{BlockFamily::standard_residual, filters, stride, false}.check();
  int x = b.conv(prefix + ".conv1", in, filters, 3, stride, 1, false);
  x = b.batch_norm(prefix + ".bn1", x);
  x = b.relu(prefix + ".relu1", x);
  x = b.conv(prefix + ".conv2", x, filters, 3, 1, 1, false);
  x = b.batch_norm(prefix + ".bn2", x);
  const int skip = detail::shortcut(b, prefix, in, filters, stride, false);
  return detail::close_block(b, prefix, x, skip);
}

/// 1x1 reduce to out/4 -> 3x3 (strided) -> 1x1 expand, each with BN.
template <typename T>
int build_bottleneck(GraphBuilder<T>& b, const std::string& prefix, int in, std::size_t out_dim,
                     std::size_t stride, bool force_projection) {
  BlockSpec{BlockFamily::bottleneck, out_dim, stride, force_projection}.check();
  const std::size_t mid = out_dim / 4;
  int x = b.conv(prefix + ".reduce", in, mid, 1, 1, 0, false);
  x = b.batch_norm(prefix + ".reduce_bn", x);
  x = b.relu(prefix + ".reduce_relu", x);
  x = b.conv(prefix + ".conv", x, mid, 3, stride, 1, false);
  x = b.batch_norm(prefix + ".conv_bn", x);
  x = b.relu(prefix + ".conv_relu", x);
  x = b.conv(prefix + ".expand", x, out_dim, 1, 1, 0, false);
  x = b.batch_norm(prefix + ".expand_bn", x);
  const int skip = detail::shortcut(b, prefix, in, out_dim, stride, force_projection);
  return detail::close_block(b, prefix, x, skip);
}

template <typename T>
int build_block(GraphBuilder<T>& b, const std::string& prefix, int in, const BlockSpec& spec) {
  spec.check();
  switch (spec.family) {
    case BlockFamily::ds_residual: return build_ds_residual(b, prefix, in, spec.filters, spec.stride);
    case BlockFamily::standard_residual: return build_standard_residual(b, prefix, in, spec.filters, spec.stride);
    case BlockFamily::bottleneck:
      return build_bottleneck(b, prefix, in, spec.filters, spec.stride, spec.force_projection);
  }
  return in;
}

}  // namespace cnnzoo
