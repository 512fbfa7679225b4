#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cnnzoo/errors.hpp"
#include "cnnzoo/tensor.hpp"

namespace cnnzoo {

enum class EntryKind { parameter, buffer };

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  EntryKind kind = EntryKind::parameter;
  bool trainable = true;

  bool is_trainable_param() const noexcept { return kind == EntryKind::parameter && trainable; }
};

/// Named parameters and buffers in insertion order. Names are hierarchical
/// ("stage2.block1.dw.weight"); buffers are never trainable.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add_parameter(std::string name, Shape shape) {
    return insert(std::move(name), Tensor<T>(shape), EntryKind::parameter, true);
  }

  Tensor<T>& add_buffer(std::string name, Shape shape, T fill = T(0)) {
    return insert(std::move(name), Tensor<T>(shape, fill), EntryKind::buffer, false);
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  ParamEntry<T>& entry(std::string_view name) { return entries_[locate(name)]; }
  const ParamEntry<T>& entry(std::string_view name) const { return entries_[locate(name)]; }
  Tensor<T>& operator[](std::string_view name) { return entry(name).value; }
  const Tensor<T>& operator[](std::string_view name) const { return entry(name).value; }

  std::vector<ParamEntry<T>>& entries() noexcept { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  /// Total scalar count over entries matching the predicate.
  template <typename Pred>
  std::size_t count_if(Pred pred) const {
    std::size_t total = 0;
    for (const auto& e : entries_)
      if (pred(e)) total += e.value.size();
    return total;
  }

  std::size_t trainable_count() const {
    return count_if([](const ParamEntry<T>& e) { return e.is_trainable_param(); });
  }
  std::size_t frozen_param_count() const {
    return count_if([](const ParamEntry<T>& e) { return e.kind == EntryKind::parameter && !e.trainable; });
  }
  std::size_t buffer_count() const {
    return count_if([](const ParamEntry<T>& e) { return e.kind == EntryKind::buffer; });
  }

  /// Copies values (and flags) from another scalar type with identical layout.
  template <typename U>
  static ParamStore from(const ParamStore<U>& other) {
    ParamStore out;
    for (const auto& e : other.entries()) {
      out.insert(e.name, tensor_cast<T>(e.value), e.kind, e.trainable);
    }
    return out;
  }

 private:
  Tensor<T>& insert(std::string name, Tensor<T> value, EntryKind kind, bool trainable) {
    if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), kind, kind == EntryKind::parameter && trainable});
    return entries_.back().value;
  }

  std::size_t locate(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  template <typename U>
  friend class ParamStore;

  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient tensors keyed by parameter name, in the order they were produced.
template <typename T>
class Gradients {
 public:
  Tensor<T>& get_or_zero(const std::string& name, Shape shape) {
    auto it = index_.find(name);
    if (it != index_.end()) return items_[it->second].second;
    index_.emplace(name, items_.size());
    items_.emplace_back(name, Tensor<T>(shape));
    return items_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("no gradient for '" + name + "'");
    return items_[it->second].second;
  }
  Tensor<T>& operator[](const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("no gradient for '" + name + "'");
    return items_[it->second].second;
  }

  std::size_t size() const noexcept { return items_.size(); }
  auto begin() const noexcept { return items_.begin(); }
  auto end() const noexcept { return items_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace cnnzoo
