#pragma once

// "CNT1" tensor container. Little-endian throughout:
//   magic "CNT1" | u32 entry count | entries...
//   entry: u16 name length | UTF-8 name | u8 dtype (0 = f32) | u8 rank |
//          rank x u32 extents | row-major payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "cnnzoo/errors.hpp"
#include "cnnzoo/param_store.hpp"

namespace cnnzoo {

inline constexpr char kTensorMagic[4] = {'C', 'N', 'T', '1'};
inline constexpr std::uint8_t kDtypeF32 = 0;

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t expected_size() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  friend bool operator==(const NamedArray& a, const NamedArray& b) {
    // Bitwise payload comparison so NaNs and signed zeros round-trip exactly.
    return a.name == b.name && a.dims == b.dims && a.data.size() == b.data.size() &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(data_[pos_++]) << (8 * i));
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_tensor_file(std::span<const NamedArray> arrays) {
  std::unordered_set<std::string> seen;
  detail::ByteWriter w;
  w.bytes(kTensorMagic, 4);
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (!seen.insert(a.name).second) throw ConfigError("tensor file: duplicate entry name '" + a.name + "'");
    if (a.name.size() > 0xFFFF) throw ConfigError("tensor file: name too long");
    if (a.dims.size() > 0xFF) throw ConfigError("tensor file: rank too large");
    if (a.expected_size() != a.data.size()) {
      throw ShapeError("tensor file: '" + a.name + "' payload does not match its extents");
    }
    w.u16(static_cast<std::uint16_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.u8(kDtypeF32);
    w.u8(static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) w.u32(d);
    for (float f : a.data) w.u32(std::bit_cast<std::uint32_t>(f));
  }
  return w.take();
}

inline std::vector<NamedArray> decode_tensor_file(std::string_view bytes) {
  detail::ByteReader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kTensorMagic, 4) != 0) throw FormatError("bad magic", 0);
  const std::uint32_t count = r.u32("entry count");
  std::vector<NamedArray> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::uint16_t len = r.u16("name length");
    a.name = std::string(r.take(len, "name"));
    const std::size_t dtype_at = r.offset();
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeF32) throw FormatError("unknown dtype code " + std::to_string(dtype), dtype_at);
    const std::uint8_t rank = r.u8("rank");
    std::uint64_t total = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      a.dims.push_back(r.u32("extent"));
      total *= a.dims.back();
    }
    if (total > r.remaining() / 4) throw FormatError("truncated payload of '" + a.name + "'", r.offset());
    a.data.resize(static_cast<std::size_t>(total));
    for (auto& f : a.data) f = std::bit_cast<float>(r.u32("payload"));
    out.push_back(std::move(a));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes", r.offset());
  return out;
}

inline void write_tensor_file(const std::string& path, std::span<const NamedArray> arrays) {
  const std::string bytes = encode_tensor_file(arrays);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::vector<NamedArray> read_tensor_file(const std::string& path) {
  return decode_tensor_file(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Checkpoints: every ParamStore entry as a rank-4 array, followed by one
// metadata entry holding a per-entry code (0 frozen, 1 trainable, 2 buffer).

inline constexpr const char* kEntryFlagsName = "__entry_flags__";

inline std::vector<NamedArray> to_arrays(const ParamStore<float>& params) {
  std::vector<NamedArray> out;
  NamedArray flags{kEntryFlagsName, {static_cast<std::uint32_t>(params.size())}, {}};
  for (const auto& e : params.entries()) {
    NamedArray a;
    a.name = e.name;
    for (auto d : e.value.shape().dims()) a.dims.push_back(static_cast<std::uint32_t>(d));
    a.data = e.value.storage();
    out.push_back(std::move(a));
    flags.data.push_back(e.kind == EntryKind::buffer ? 2.0f : (e.trainable ? 1.0f : 0.0f));
  }
  out.push_back(std::move(flags));
  return out;
}

/// Loads values and trainable flags into a store of identical layout. Throws
/// DataError naming the first tensor whose name, kind or extents differ.
inline void load_arrays(ParamStore<float>& params, std::span<const NamedArray> arrays) {
  const NamedArray* flags = nullptr;
  std::size_t n = arrays.size();
  if (n && arrays[n - 1].name == kEntryFlagsName) flags = &arrays[--n];
  for (std::size_t i = 0; i < std::max(n, params.size()); ++i) {
    if (i >= n) throw DataError("checkpoint mismatch: missing tensor '" + params.entries()[i].name + "'");
    if (i >= params.size()) throw DataError("checkpoint mismatch: unexpected tensor '" + arrays[i].name + "'");
    auto& e = params.entries()[i];
    const auto& a = arrays[i];
    std::vector<std::uint32_t> want;
    for (auto d : e.value.shape().dims()) want.push_back(static_cast<std::uint32_t>(d));
    if (a.name != e.name || a.dims != want) {
      throw DataError("checkpoint mismatch at tensor '" + e.name + "' (file has '" + a.name + "')");
    }
  }
  if (flags && flags->data.size() != n) throw DataError("checkpoint mismatch: entry flag count");
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = params.entries()[i];
    if (flags) {
      const float code = flags->data[i];
      if ((code == 2.0f) != (e.kind == EntryKind::buffer)) {
        throw DataError("checkpoint mismatch at tensor '" + e.name + "': parameter/buffer kind differs");
      }
      if (e.kind == EntryKind::parameter) e.trainable = code == 1.0f;
    }
    e.value.storage() = arrays[i].data;
  }
}

inline void save_checkpoint(const std::string& path, const ParamStore<float>& params) {
  const auto arrays = to_arrays(params);
  write_tensor_file(path, arrays);
}

inline void load_checkpoint(const std::string& path, ParamStore<float>& params) {
  const auto arrays = read_tensor_file(path);
  load_arrays(params, arrays);
}

}  // namespace cnnzoo
