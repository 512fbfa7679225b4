#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cnnzoo/errors.hpp"
#include "cnnzoo/layers.hpp"
#include "cnnzoo/param_store.hpp"
#include "cnnzoo/rng.hpp"
#include "cnnzoo/tensor.hpp"

namespace cnnzoo {

enum class LayerKind {
  conv,
  depthwise_conv,
  batch_norm,
  relu,
  leaky_relu,
  max_pool,
  global_avg_pool,
  adaptive_avg_pool,
  fully_connected,
  dropout,
  softmax,
  add_junction,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::depthwise_conv: return "depthwise_conv";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::adaptive_avg_pool: return "adaptive_avg_pool";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::dropout: return "dropout";
    case LayerKind::softmax: return "softmax";
    case LayerKind::add_junction: return "add_junction";
  }
  return "?";
}

struct LayerHyper {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t filters = 0;  // output channels / units
  std::size_t target_h = 1;
  std::size_t target_w = 1;
  double slope = 0.0;  // leaky_relu
  double rate = 0.0;   // dropout
  bool bias = false;
};

/// Index of the graph input when used in LayerNode::inputs.
inline constexpr int kGraphInput = -1;

struct LayerNode {
  std::string name;
  LayerKind kind = LayerKind::relu;
  LayerHyper hp;
  std::vector<int> inputs;
  std::vector<std::string> params;   // weight[, bias] or gamma, beta
  std::vector<std::string> buffers;  // running_mean, running_var
  std::size_t out_channels = 0;
};

struct InputSpec {
  std::size_t channels = 3;
  std::size_t height = 224;
  std::size_t width = 224;

  Shape batch(std::size_t n) const { return Shape{n, channels, height, width}; }
};

struct ForwardOptions {
  layers::Mode mode = layers::Mode::infer;
  std::uint64_t dropout_seed = 0;
  std::uint64_t dropout_stream = 0;
  bool dropout_active = true;  // false: dropout is the identity even in train mode
};

template <typename T>
struct BackwardResult {
  Gradients<T> params;
  Tensor<T> input;  // empty unless requested
};

/// Directed acyclic graph of layers stored in topological order, plus the
/// parameters it owns and the forward tape of the most recent pass.
template <typename T>
class Graph {
 public:
  std::string model;
  InputSpec input;
  std::size_t output_dim = 0;
  std::vector<LayerNode> nodes;
  ParamStore<T> params;
  layers::BatchNormConfig bn;
  int logits_node = -1;  // loss is attached here (before any final softmax)

  // Test fixture: when non-empty, backward scales this parameter's gradient
  // by 1.5 so gradient checks have a negative control.
  std::string corrupt_gradient_of;

  template <typename U>
  Graph<U> cast() const {
    Graph<U> g;
    g.model = model;
    g.input = input;
    g.output_dim = output_dim;
    g.nodes = nodes;
    g.params = ParamStore<U>::from(params);
    g.bn = bn;
    g.logits_node = logits_node;
    g.corrupt_gradient_of = corrupt_gradient_of;
    return g;
  }

  int output_node() const { return static_cast<int>(nodes.size()) - 1; }

  /// Structural checks: topological order, parameter presence, junction arity.
  void validate() const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& nd = nodes[i];
      for (int in : nd.inputs) {
        if (in < kGraphInput || in >= static_cast<int>(i)) {
          throw ConfigError("graph: node '" + nd.name + "' has a non-topological input");
        }
      }
      const std::size_t want = nd.kind == LayerKind::add_junction ? 2 : 1;
      if (nd.inputs.size() != want) throw ConfigError("graph: node '" + nd.name + "' has wrong input count");
      for (const auto& p : nd.params)
        if (!params.contains(p)) throw ConfigError("graph: missing parameter '" + p + "'");
      for (const auto& b : nd.buffers)
        if (!params.contains(b)) throw ConfigError("graph: missing buffer '" + b + "'");
    }
  }

  /// Output shape of every node for the given input shape.
  std::vector<Shape> infer_shapes(Shape in) const {
    std::vector<Shape> out(nodes.size());
    auto src = [&](int i) -> const Shape& { return i == kGraphInput ? in : out[static_cast<std::size_t>(i)]; };
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& nd = nodes[i];
      const Shape s = src(nd.inputs[0]);
      const LayerHyper& hp = nd.hp;
      switch (nd.kind) {
        case LayerKind::conv:
        case LayerKind::depthwise_conv:
        case LayerKind::max_pool: {
          const auto [oh, ow] = window_output(s, Window{hp.kernel, hp.kernel, hp.stride, hp.pad});
          out[i] = Shape{s.n, nd.out_channels, oh, ow};
          break;
        }
        case LayerKind::global_avg_pool: out[i] = Shape{s.n, s.c, 1, 1}; break;
        case LayerKind::adaptive_avg_pool:
          layers::check_adaptive_target(s, hp.target_h, hp.target_w);
          out[i] = Shape{s.n, s.c, hp.target_h, hp.target_w};
          break;
        case LayerKind::fully_connected:
          if (s.h != 1 || s.w != 1) throw ShapeError(nd.name + ": fully_connected needs h=w=1, got " + s.str());
          out[i] = Shape{s.n, nd.out_channels, 1, 1};
          break;
        case LayerKind::softmax:
          if (s.h != 1 || s.w != 1) throw ShapeError(nd.name + ": softmax needs h=w=1, got " + s.str());
          out[i] = s;
          break;
        case LayerKind::add_junction:
          if (!(src(nd.inputs[1]) == s)) {
            throw ShapeError(nd.name + ": add_junction inputs differ " + s.str() + " vs " + src(nd.inputs[1]).str());
          }
          out[i] = s;
          break;
        default: out[i] = s; break;
      }
      if (nd.kind != LayerKind::add_junction && nd.out_channels != 0 && out[i].c != nd.out_channels) {
        throw ShapeError(nd.name + ": expected " + std::to_string(nd.out_channels) + " channels, got " +
                         std::to_string(out[i].c));
      }
    }
    return out;
  }

  Tensor<T> forward(const Tensor<T>& x, const ForwardOptions& opt = {}) {
    if (!(x.shape().c == input.channels)) {
      throw DataError("input has " + std::to_string(x.shape().c) + " channels, model expects " +
                      std::to_string(input.channels));
    }
    require_nonempty(x.shape(), model + " input");
    tape_.input = x;
    tape_.nodes.assign(nodes.size(), NodeTape{});
    tape_.opt = opt;
    tape_.valid = true;
    run_from(0);
    return tape_.nodes.back().out;
  }

  /// Re-runs nodes [first, end) against the cached tape; earlier activations
  /// are reused. Used by the gradient checker after perturbing one parameter.
  Tensor<T> forward_from(std::size_t first) {
    if (!tape_.valid) throw StateError("forward_from before forward");
    run_from(first);
    return tape_.nodes.back().out;
  }

  bool has_tape() const noexcept { return tape_.valid; }

  const Tensor<T>& activation(int node) const {
    if (!tape_.valid) throw StateError("no forward pass recorded");
    return node == kGraphInput ? tape_.input : tape_.nodes[static_cast<std::size_t>(node)].out;
  }

  const Tensor<T>& logits() const { return activation(logits_node); }

  /// Reverse-topological sweep from `seed_node` (default: logits node).
  /// Frozen parameters receive no gradient entry.
  BackwardResult<T> backward(const Tensor<T>& dseed, int seed_node = -2, bool want_input_grad = false) {
    if (!tape_.valid) throw StateError("backward before forward");
    if (seed_node == -2) seed_node = logits_node;
    if (seed_node < 0 || seed_node >= static_cast<int>(nodes.size())) throw StateError("invalid seed node");
    if (!(dseed.shape() == activation(seed_node).shape())) {
      throw ShapeError("backward: seed gradient " + dseed.shape().str() + " does not match node output " +
                       activation(seed_node).shape().str());
    }
    const std::vector<bool> need = needs_input_grad(want_input_grad);
    BackwardResult<T> result;
    std::vector<Tensor<T>> grads(nodes.size());
    Tensor<T> dinput;
    grads[static_cast<std::size_t>(seed_node)] = dseed;

    auto accumulate = [&](int target, Tensor<T>&& g) {
      Tensor<T>& slot = target == kGraphInput ? dinput : grads[static_cast<std::size_t>(target)];
      if (slot.size() == 0) {
        slot = std::move(g);
      } else {
        for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
      }
    };
    auto wants = [&](int target) {
      return target == kGraphInput ? want_input_grad : static_cast<bool>(need[static_cast<std::size_t>(target)]);
    };

    for (int idx = seed_node; idx >= 0; --idx) {
      const auto i = static_cast<std::size_t>(idx);
      Tensor<T>& dy = grads[i];
      if (dy.size() == 0) continue;
      const LayerNode& nd = nodes[i];
      const NodeTape& tp = tape_.nodes[i];
      const Tensor<T>& x = activation(nd.inputs[0]);
      const bool want_dx = wants(nd.inputs[0]);
      Tensor<T> dx;
      Tensor<T>* dxp = want_dx ? &dx : nullptr;
      auto pgrad = [&](std::size_t k) -> Tensor<T>* {
        auto& e = params.entry(nd.params[k]);
        if (!e.is_trainable_param()) return nullptr;
        return &result.params.get_or_zero(e.name, e.value.shape());
      };

      switch (nd.kind) {
        case LayerKind::conv:
          layers::conv2d_backward(x, params[nd.params[0]], nd.hp.stride, nd.hp.pad, dy, dxp, pgrad(0),
                                  nd.hp.bias ? pgrad(1) : nullptr);
          break;
        case LayerKind::depthwise_conv:
          layers::depthwise_conv2d_backward(x, params[nd.params[0]], nd.hp.stride, nd.hp.pad, dy, dxp, pgrad(0));
          break;
        case LayerKind::batch_norm:
          layers::batch_norm_backward(dy, params[nd.params[0]], tp.bn, tp.bn_mode, dxp, pgrad(0), pgrad(1));
          break;
        case LayerKind::relu:
          if (want_dx) dx = layers::relu_backward(x, dy);
          break;
        case LayerKind::leaky_relu:
          if (want_dx) dx = layers::leaky_relu_backward(x, dy, nd.hp.slope);
          break;
        case LayerKind::max_pool:
          if (want_dx) dx = layers::max_pool_backward(x.shape(), tp.argmax, dy);
          break;
        case LayerKind::global_avg_pool:
          if (want_dx) dx = layers::global_avg_pool_backward(x.shape(), dy);
          break;
        case LayerKind::adaptive_avg_pool:
          if (want_dx) dx = layers::adaptive_avg_pool_backward(x.shape(), dy);
          break;
        case LayerKind::fully_connected:
          layers::fully_connected_backward(x, params[nd.params[0]], dy, dxp, pgrad(0),
                                           nd.hp.bias ? pgrad(1) : nullptr);
          break;
        case LayerKind::dropout:
          if (want_dx) dx = layers::dropout_backward(tp.mask, dy);
          break;
        case LayerKind::softmax:
          if (want_dx) dx = layers::softmax_backward(tp.out, dy);
          break;
        case LayerKind::add_junction:
          // Sum rule: both branches receive the incoming gradient unchanged.
          if (wants(nd.inputs[1])) accumulate(nd.inputs[1], Tensor<T>(dy));
          if (want_dx) dx = dy;
          break;
      }
      if (want_dx) accumulate(nd.inputs[0], std::move(dx));
      dy = Tensor<T>();  // release
    }
    if (!corrupt_gradient_of.empty() && result.params.contains(corrupt_gradient_of)) {
      for (auto& v : result.params[corrupt_gradient_of].values()) v *= T(1.5);
    }
    if (want_input_grad) result.input = dinput.size() ? std::move(dinput) : Tensor<T>(tape_.input.shape());
    return result;
  }

 private:
  struct NodeTape {
    Tensor<T> out;
    layers::BatchNormCache<T> bn;
    layers::Mode bn_mode = layers::Mode::infer;
    std::vector<std::size_t> argmax;
    std::vector<T> mask;
  };
  struct TapeState {
    Tensor<T> input;
    std::vector<NodeTape> nodes;
    ForwardOptions opt;
    bool valid = false;
  };

  // A node needs an input gradient if anything upstream of it (including the
  // graph input, when requested) owns a trainable parameter.
  std::vector<bool> needs_input_grad(bool want_input_grad) const {
    std::vector<bool> live(nodes.size(), false);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      bool l = false;
      for (const auto& p : nodes[i].params) l = l || params.entry(p).is_trainable_param();
      for (int in : nodes[i].inputs) l = l || (in == kGraphInput ? want_input_grad : live[static_cast<std::size_t>(in)]);
      live[i] = l;
    }
    return live;
  }

  void run_from(std::size_t first) {
    for (std::size_t i = first; i < nodes.size(); ++i) {
      const LayerNode& nd = nodes[i];
      NodeTape& tp = tape_.nodes[i];
      const Tensor<T>& x = activation(nd.inputs[0]);
      const LayerHyper& hp = nd.hp;
      switch (nd.kind) {
        case LayerKind::conv:
          tp.out = layers::conv2d(x, params[nd.params[0]], hp.bias ? &params[nd.params[1]] : nullptr, hp.stride,
                                  hp.pad, nd.name);
          break;
        case LayerKind::depthwise_conv:
          tp.out = layers::depthwise_conv2d(x, params[nd.params[0]], hp.stride, hp.pad, nd.name);
          break;
        case LayerKind::batch_norm:
          // A frozen normalization layer runs on its running statistics and
          // leaves them untouched, even during training.
          tp.bn_mode = params.entry(nd.params[0]).trainable ? tape_.opt.mode : layers::Mode::infer;
          tp.out = layers::batch_norm(x, params[nd.params[0]], params[nd.params[1]], params[nd.buffers[0]],
                                      params[nd.buffers[1]], tp.bn_mode, bn, &tp.bn, nd.name);
          break;
        case LayerKind::relu: tp.out = layers::relu(x); break;
        case LayerKind::leaky_relu: tp.out = layers::leaky_relu(x, hp.slope); break;
        case LayerKind::max_pool:
          tp.out = layers::max_pool(x, Window{hp.kernel, hp.kernel, hp.stride, hp.pad}, &tp.argmax, nd.name);
          break;
        case LayerKind::global_avg_pool: tp.out = layers::global_avg_pool(x); break;
        case LayerKind::adaptive_avg_pool: tp.out = layers::adaptive_avg_pool(x, hp.target_h, hp.target_w); break;
        case LayerKind::fully_connected:
          tp.out = layers::fully_connected(x, params[nd.params[0]], hp.bias ? &params[nd.params[1]] : nullptr,
                                           nd.name);
          break;
        case LayerKind::dropout: {
          Rng rng = Rng(tape_.opt.dropout_seed, tape_.opt.dropout_stream).split(i);
          const auto mode = tape_.opt.dropout_active ? tape_.opt.mode : layers::Mode::infer;
          tp.out = layers::dropout(x, hp.rate, mode, rng, &tp.mask);
          break;
        }
        case LayerKind::softmax: tp.out = layers::softmax(x, nd.name); break;
        case LayerKind::add_junction: {
          const Tensor<T>& b = activation(nd.inputs[1]);
          if (!(b.shape() == x.shape())) {
            throw ShapeError(nd.name + ": add_junction inputs differ " + x.shape().str() + " vs " + b.shape().str());
          }
          tp.out = x;
          for (std::size_t k = 0; k < b.size(); ++k) tp.out[k] += b[k];
          break;
        }
      }
    }
  }

  TapeState tape_;
};

// ---------------------------------------------------------------------------

/// Appends nodes while tracking channel counts and registering parameters.
template <typename T>
class GraphBuilder {
 public:
  GraphBuilder(std::string model, InputSpec input) {
    g_.model = std::move(model);
    g_.input = input;
  }

  std::size_t channels(int node) const {
    return node == kGraphInput ? g_.input.channels : g_.nodes[static_cast<std::size_t>(node)].out_channels;
  }

  int conv(const std::string& name, int in, std::size_t filters, std::size_t k, std::size_t stride,
           std::size_t pad, bool bias) {
    LayerNode nd = make(name, LayerKind::conv, in, filters);
    nd.hp.kernel = k;
    nd.hp.stride = stride;
    nd.hp.pad = pad;
    nd.hp.filters = filters;
    nd.hp.bias = bias;
    nd.params.push_back(name + ".weight");
    g_.params.add_parameter(name + ".weight", Shape{filters, channels(in), k, k});
    if (bias) {
      nd.params.push_back(name + ".bias");
      g_.params.add_parameter(name + ".bias", Shape{filters, 1, 1, 1});
    }
    return push(std::move(nd));
  }

  int depthwise(const std::string& name, int in, std::size_t k, std::size_t stride, std::size_t pad) {
    const std::size_t c = channels(in);
    LayerNode nd = make(name, LayerKind::depthwise_conv, in, c);
    nd.hp.kernel = k;
    nd.hp.stride = stride;
    nd.hp.pad = pad;
    nd.hp.filters = c;
    nd.params.push_back(name + ".weight");
    g_.params.add_parameter(name + ".weight", Shape{c, 1, k, k});
    return push(std::move(nd));
  }

  int batch_norm(const std::string& name, int in) {
    const std::size_t c = channels(in);
    LayerNode nd = make(name, LayerKind::batch_norm, in, c);
    nd.params = {name + ".gamma", name + ".beta"};
    nd.buffers = {name + ".running_mean", name + ".running_var"};
    g_.params.add_parameter(name + ".gamma", Shape{c, 1, 1, 1}).fill(T(1));
    g_.params.add_parameter(name + ".beta", Shape{c, 1, 1, 1});
    g_.params.add_buffer(name + ".running_mean", Shape{c, 1, 1, 1}, T(0));
    g_.params.add_buffer(name + ".running_var", Shape{c, 1, 1, 1}, T(1));
    return push(std::move(nd));
  }

  int relu(const std::string& name, int in) { return push(make(name, LayerKind::relu, in, channels(in))); }

  int leaky_relu(const std::string& name, int in, double slope) {
    LayerNode nd = make(name, LayerKind::leaky_relu, in, channels(in));
    nd.hp.slope = slope;
    return push(std::move(nd));
  }

  int max_pool(const std::string& name, int in, std::size_t k, std::size_t stride, std::size_t pad) {
    LayerNode nd = make(name, LayerKind::max_pool, in, channels(in));
    nd.hp.kernel = k;
    nd.hp.stride = stride;
    nd.hp.pad = pad;
    return push(std::move(nd));
  }

  int global_avg_pool(const std::string& name, int in) {
    return push(make(name, LayerKind::global_avg_pool, in, channels(in)));
  }

  int adaptive_avg_pool(const std::string& name, int in, std::size_t th, std::size_t tw) {
    LayerNode nd = make(name, LayerKind::adaptive_avg_pool, in, channels(in));
    nd.hp.target_h = th;
    nd.hp.target_w = tw;
    return push(std::move(nd));
  }

  int fully_connected(const std::string& name, int in, std::size_t units, bool bias = true) {
    LayerNode nd = make(name, LayerKind::fully_connected, in, units);
    nd.hp.filters = units;
    nd.hp.bias = bias;
    nd.params.push_back(name + ".weight");
    g_.params.add_parameter(name + ".weight", Shape{units, channels(in), 1, 1});
    if (bias) {
      nd.params.push_back(name + ".bias");
      g_.params.add_parameter(name + ".bias", Shape{units, 1, 1, 1});
    }
    return push(std::move(nd));
  }

  int dropout(const std::string& name, int in, double rate) {
    layers::check_dropout_rate(rate);
    LayerNode nd = make(name, LayerKind::dropout, in, channels(in));
    nd.hp.rate = rate;
    return push(std::move(nd));
  }

  int softmax(const std::string& name, int in) { return push(make(name, LayerKind::softmax, in, channels(in))); }

  int add(const std::string& name, int a, int b) {
    if (channels(a) != channels(b)) {
      throw ShapeError(name + ": add_junction channel mismatch " + std::to_string(channels(a)) + " vs " +
                       std::to_string(channels(b)));
    }
    LayerNode nd = make(name, LayerKind::add_junction, a, channels(a));
    nd.inputs.push_back(b);
    return push(std::move(nd));
  }

  Graph<T>& graph() noexcept { return g_; }

  Graph<T> finish(int logits_node, std::size_t output_dim) {
    g_.logits_node = logits_node;
    g_.output_dim = output_dim;
    g_.validate();
    return std::move(g_);
  }

 private:
  LayerNode make(const std::string& name, LayerKind kind, int in, std::size_t out_channels) const {
    if (in < kGraphInput || in >= static_cast<int>(g_.nodes.size())) {
      throw ConfigError("graph builder: node '" + name + "' references an unknown input");
    }
    LayerNode nd;
    nd.name = name;
    nd.kind = kind;
    nd.inputs = {in};
    nd.out_channels = out_channels;
    return nd;
  }

  int push(LayerNode nd) {
    g_.nodes.push_back(std::move(nd));
    return static_cast<int>(g_.nodes.size()) - 1;
  }

  Graph<T> g_;
};

}  // namespace cnnzoo
