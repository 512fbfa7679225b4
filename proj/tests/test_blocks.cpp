#include <gtest/gtest.h>

#include "cnnzoo/blocks.hpp"
#include "cnnzoo/zoo.hpp"
#include "support.hpp"

using namespace cnnzoo;
using testing_support::random_tensor;

namespace {

struct Built {
  Graph<double> g;
  int out = 0;
};

Built one_block(BlockFamily family, std::size_t in_c, std::size_t filters, std::size_t stride, bool force = false,
                std::size_t hw = 8) {
  GraphBuilder<double> b("block", InputSpec{in_c, hw, hw});
  const int out = build_block(b, "blk", kGraphInput, BlockSpec{family, filters, stride, force});
  Built r{b.finish(out, filters), out};
  return r;
}

bool has_entry(const Graph<double>& g, const std::string& name) { return g.params.contains(name); }

// Sum of weight sizes for entries whose name contains `part` and ends in ".weight".
std::size_t weights_matching(const Graph<double>& g, const std::string& part) {
  std::size_t total = 0;
  for (const auto& e : g.params)
    if (e.name.find(part) != std::string::npos && e.name.ends_with(".weight")) total += e.value.size();
  return total;
}

std::size_t main_path_weights(const Graph<double>& g) {
  std::size_t total = 0;
  for (const auto& e : g.params)
    if (e.name.ends_with(".weight") && e.name.find(".proj") == std::string::npos) total += e.value.size();
  return total;
}

int node_index(const Graph<double>& g, const std::string& name) {
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (g.nodes[i].name == name) return static_cast<int>(i);
  return -2;
}

}  // namespace

TEST(DsResidual, MatchingDimsUseIdentity) {
  const auto b = one_block(BlockFamily::ds_residual, 64, 64, 1);
  EXPECT_FALSE(has_entry(b.g, "blk.proj.weight"));
  EXPECT_EQ(weights_matching(b.g, ".proj"), 0u);
}

TEST(DsResidual, ProjectionWhenWidening) {
  const auto b = one_block(BlockFamily::ds_residual, 64, 128, 2);
  ASSERT_TRUE(has_entry(b.g, "blk.proj.weight"));
  EXPECT_EQ(b.g.params["blk.proj.weight"].size(), 8192u);
  EXPECT_TRUE(has_entry(b.g, "blk.proj_bn.gamma"));
}

TEST(DsResidual, DepthwiseWeights) {
  const auto b = one_block(BlockFamily::ds_residual, 64, 64, 1);
  EXPECT_EQ(b.g.params["blk.dw.weight"].size(), 576u);
  EXPECT_EQ(main_path_weights(b.g), 64u * 9 + 64 * 64 + 64 * 64 * 9);
}

TEST(DsResidual, LayerOrder) {
  const auto b = one_block(BlockFamily::ds_residual, 4, 4, 1);
  std::vector<LayerKind> kinds;
  for (const auto& n : b.g.nodes) kinds.push_back(n.kind);
  const std::vector<LayerKind> expect{LayerKind::depthwise_conv, LayerKind::batch_norm, LayerKind::conv,
                                      LayerKind::batch_norm,     LayerKind::relu,       LayerKind::conv,
                                      LayerKind::batch_norm,     LayerKind::add_junction, LayerKind::relu};
  EXPECT_EQ(kinds, expect);
}

TEST(StandardResidual, IdentityBlockWeights) {
  const auto b = one_block(BlockFamily::standard_residual, 64, 64, 1);
  EXPECT_EQ(main_path_weights(b.g), 73728u);
  EXPECT_FALSE(has_entry(b.g, "blk.proj.weight"));
}

TEST(StandardResidual, DownsamplingBlockWeights) {
  const auto b = one_block(BlockFamily::standard_residual, 64, 128, 2);
  EXPECT_EQ(main_path_weights(b.g), 221184u);
  EXPECT_EQ(b.g.params["blk.proj.weight"].size(), 64u * 128);
}

TEST(Bottleneck, ForcedProjectionAtStrideOne) {
  const auto b = one_block(BlockFamily::bottleneck, 64, 256, 1, true);
  ASSERT_TRUE(has_entry(b.g, "blk.proj.weight"));
  EXPECT_EQ(b.g.params["blk.proj.weight"].size(), 64u * 256);
}

TEST(Bottleneck, IdentityWhenDimsMatch) {
  const auto b = one_block(BlockFamily::bottleneck, 256, 256, 1);
  EXPECT_FALSE(has_entry(b.g, "blk.proj.weight"));
}

TEST(Bottleneck, DownsamplingMainPathWeights) {
  const auto b = one_block(BlockFamily::bottleneck, 256, 512, 2);
  EXPECT_EQ(main_path_weights(b.g), 245760u);
  EXPECT_EQ(b.g.params["blk.conv.weight"].shape(), (Shape{128, 128, 3, 3}));
}

TEST(Bottleneck, OutputNotDivisibleByFourIsConfigError) {
  EXPECT_THROW(one_block(BlockFamily::bottleneck, 8, 10, 1), ConfigError);
}

TEST(BlockSpec, RejectsBadStrideAndFilters) {
  EXPECT_THROW((BlockSpec{BlockFamily::standard_residual, 8, 3, false}.check()), ConfigError);
  EXPECT_THROW((BlockSpec{BlockFamily::ds_residual, 0, 1, false}.check()), ConfigError);
}

TEST(Blocks, SpatialExtentKeptOrHalved) {
  for (BlockFamily f : {BlockFamily::ds_residual, BlockFamily::standard_residual, BlockFamily::bottleneck})
    for (std::size_t stride : {1u, 2u}) {
      const auto b = one_block(f, 8, 16, stride, false, 12);
      const auto shapes = b.g.infer_shapes(Shape{1, 8, 12, 12});
      EXPECT_EQ(shapes.back(), (Shape{1, 16, 12 / stride, 12 / stride}));
    }
}

// With every main-path parameter zero and the last BN's gamma zero, the block
// reduces to ReLU(shortcut(x)), for both identity and projection shortcuts.
TEST(Blocks, ZeroMainPathGivesReluOfShortcut) {
  struct Case {
    BlockFamily family;
    std::size_t in, out, stride;
    bool force;
    const char* last_bn;
  };
  const Case cases[] = {
      {BlockFamily::ds_residual, 4, 4, 1, false, "blk.conv_bn"},
      {BlockFamily::ds_residual, 4, 8, 2, false, "blk.conv_bn"},
      {BlockFamily::standard_residual, 4, 4, 1, false, "blk.bn2"},
      {BlockFamily::standard_residual, 4, 8, 2, false, "blk.bn2"},
      {BlockFamily::bottleneck, 8, 8, 1, false, "blk.expand_bn"},
      {BlockFamily::bottleneck, 4, 8, 1, true, "blk.expand_bn"},
  };
  for (const auto& c : cases) {
    auto b = one_block(c.family, c.in, c.out, c.stride, c.force);
    init_params(b.g, 5);
    Rng rng(9);
    for (auto& e : b.g.params) {
      if (e.kind != EntryKind::parameter) continue;
      const bool shortcut = e.name.find(".proj") != std::string::npos;
      if (shortcut) {
        for (auto& v : e.value.values()) v = rng.uniform(0.5, 1.5);
      } else {
        e.value.fill(0.0);
      }
    }
    b.g.params[std::string(c.last_bn) + ".gamma"].fill(0.0);
    const auto x = random_tensor(Shape{2, c.in, 8, 8}, rng);
    for (auto mode : {layers::Mode::train, layers::Mode::infer}) {
      ForwardOptions fo;
      fo.mode = mode;
      const auto y = b.g.forward(x, fo);
      const int proj = node_index(b.g, "blk.proj_bn");
      const Tensor<double>& skip = proj >= 0 ? b.g.activation(proj) : x;
      ASSERT_EQ(skip.shape(), y.shape());
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], std::max(0.0, skip[i]));
    }
  }
}

TEST(Blocks, ResidualGradcheck) {
  for (BlockFamily f : {BlockFamily::ds_residual, BlockFamily::standard_residual, BlockFamily::bottleneck}) {
    auto b = one_block(f, 4, 8, 2, false, 6);
    init_params(b.g, 3);
    perturb_affine(b.g, 3);
    // A per-channel shift before the 1x1 pointwise conv is cancelled by the
    // following train-mode BN; its exact-zero gradient leaves only round-off.
    if (f == BlockFamily::ds_residual) b.g.params.entry("blk.dw_bn.beta").trainable = false;
    Rng rng(4);
    const auto x = random_tensor(Shape{2, 4, 6, 6}, rng);
    const auto r = random_tensor(Shape{2, 8, 3, 3}, rng);
    const LossFn loss = [&](const Tensor<double>& y) {
      LossResult<double> out{0.0, r};
      for (std::size_t i = 0; i < y.size(); ++i) out.loss += r[i] * y[i];
      return out;
    };
    const auto res = gradcheck(b.g, loss, x, 1e-5);
    EXPECT_LT(res.max_rel_error, 1e-6) << res.worst_param;
  }
}
