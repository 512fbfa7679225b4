#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cnnzoo/graph.hpp"

namespace cnnzoo {

inline constexpr double kBytesPerParam = 4.0;
inline constexpr double kMiB = 1024.0 * 1024.0;

/// count * 4 bytes / 2^20.
inline double to_mib(std::size_t count) { return static_cast<double>(count) * kBytesPerParam / kMiB; }

struct AuditRow {
  std::string layer;
  std::string kind;
  Shape out_shape;
  std::size_t params_trainable = 0;
  std::size_t params_frozen = 0;
  std::size_t buffers = 0;
};

struct AuditReport {
  std::string model;
  std::vector<AuditRow> rows;
  std::size_t params_trainable = 0;
  std::size_t params_frozen = 0;
  std::size_t buffers = 0;

  std::size_t params_total() const { return params_trainable + params_frozen; }
  double mib_trainable() const { return to_mib(params_trainable); }
  // Frozen footprint = frozen parameters plus non-trainable buffers.
  double mib_frozen() const { return to_mib(params_frozen + buffers); }
};

/// Per-layer parameter/buffer counts and output shapes for a batch-1 input.
template <typename T>
AuditReport audit(const Graph<T>& g) {
  AuditReport r;
  r.model = g.model;
  if (g.nodes.empty()) return r;
  const std::vector<Shape> shapes = g.infer_shapes(g.input.batch(1));
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const LayerNode& nd = g.nodes[i];
    AuditRow row;
    row.layer = nd.name;
    row.kind = to_string(nd.kind);
    row.out_shape = shapes[i];
    for (const auto& p : nd.params) {
      const auto& e = g.params.entry(p);
      (e.trainable ? row.params_trainable : row.params_frozen) += e.value.size();
    }
    for (const auto& b : nd.buffers) row.buffers += g.params.entry(b).value.size();
    r.params_trainable += row.params_trainable;
    r.params_frozen += row.params_frozen;
    r.buffers += row.buffers;
    r.rows.push_back(std::move(row));
  }
  return r;
}

}  // namespace cnnzoo
