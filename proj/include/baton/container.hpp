// "BTN1" named-tensor container.
//
// Layout (all integers little-endian):
//   magic "BTN1"
//   u32 entry count
//   per entry:
//     u16 name length, UTF-8 name bytes
//     u8 dtype (0=f32, 1=f64, 2=i64)
//     u8 rank
//     rank x u64 dims
//     row-major payload
// Checkpoints append a trailing metadata block after the counted entries:
//   u32 JSON byte length, UTF-8 JSON bytes.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "baton/common.hpp"
#include "baton/tensor.hpp"

namespace baton {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

inline std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f32: return 4;
    case Dtype::f64: return 8;
    case Dtype::i64: return 8;
  }
  throw FormatError("unknown dtype");
}

struct Entry {
  std::string name;
  Dtype dtype{Dtype::f32};
  Shape dims;
  std::vector<unsigned char> payload;  // raw little-endian bytes

  std::int64_t numel() const { return shape_numel(dims); }

  template <class Real>
  static Entry from_tensor(const std::string& name, const Tensor<Real>& t) {
    Entry e;
    e.name = name;
    e.dtype = sizeof(Real) == 4 ? Dtype::f32 : Dtype::f64;
    e.dims = t.shape();
    e.payload.resize(static_cast<std::size_t>(t.numel()) * sizeof(Real));
    std::memcpy(e.payload.data(), t.data(), e.payload.size());
    return e;
  }

  static Entry from_i64(const std::string& name, const std::vector<std::int64_t>& v) {
    Entry e;
    e.name = name;
    e.dtype = Dtype::i64;
    e.dims = {static_cast<std::int64_t>(v.size())};
    e.payload.resize(v.size() * 8);
    std::memcpy(e.payload.data(), v.data(), e.payload.size());
    return e;
  }

  template <class Real>
  Tensor<Real> to_tensor() const {
    std::vector<Real> out(static_cast<std::size_t>(numel()));
    if (dtype == Dtype::f32) {
      const float* p = reinterpret_cast<const float*>(payload.data());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(p[i]);
    } else if (dtype == Dtype::f64) {
      const double* p = reinterpret_cast<const double*>(payload.data());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(p[i]);
    } else {
      throw FormatError("entry '" + name + "': integer entry read as real");
    }
    return Tensor<Real>(dims, std::move(out));
  }

  std::vector<std::int64_t> to_i64() const {
    if (dtype != Dtype::i64)
      throw FormatError("entry '" + name + "': expected i64");
    std::vector<std::int64_t> v(static_cast<std::size_t>(numel()));
    std::memcpy(v.data(), payload.data(), payload.size());
    return v;
  }
};

struct Container {
  std::vector<Entry> entries;
  std::string meta;  // optional trailing JSON, empty if absent

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  const Entry& get(const std::string& name) const {
    const Entry* e = find(name);
    if (!e) throw FormatError("container: missing entry '" + name + "'");
    return *e;
  }
};

namespace detail {

// This codebase only targets little-endian hosts; serialization memcpys.
static_assert(sizeof(float) == 4 && sizeof(double) == 8, "IEEE754 expected");

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}
template <class T>
inline void put_le(std::string& out, T v) {
  put_bytes(out, &v, sizeof(T));
}

struct Reader {
  const unsigned char* p;
  std::size_t n;
  std::size_t off = 0;
  std::string where;

  void need(std::size_t k, const char* what) {
    if (off + k > n)
      throw FormatError(where + ": truncated at byte offset " +
                        std::to_string(off) + " reading " + what);
  }
  template <class T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, p + off, sizeof(T));
    off += sizeof(T);
    return v;
  }
  void get_bytes(void* dst, std::size_t k, const char* what) {
    need(k, what);
    std::memcpy(dst, p + off, k);
    off += k;
  }
};

}  // namespace detail

inline std::string container_to_bytes(const Container& c) {
  std::string out;
  out.append("BTN1");
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.entries.size()));
  for (const auto& e : c.entries) {
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.append(e.name);
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    detail::put_bytes(out, e.payload.data(), e.payload.size());
  }
  if (!c.meta.empty()) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.meta.size()));
    out.append(c.meta);
  }
  return out;
}

inline Container container_from_bytes(const unsigned char* bytes, std::size_t n,
                                      const std::string& where) {
  detail::Reader r{bytes, n, 0, where};
  char magic[4];
  r.get_bytes(magic, 4, "magic");
  if (std::memcmp(magic, "BTN1", 4) != 0)
    throw FormatError(where + ": bad magic (not a BTN1 container)");
  Container c;
  const auto count = r.get_le<std::uint32_t>("entry count");
  c.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto name_len = r.get_le<std::uint16_t>("name length");
    e.name.resize(name_len);
    r.get_bytes(e.name.data(), name_len, "name");
    const auto dt = r.get_le<std::uint8_t>("dtype");
    if (dt > 2) throw FormatError(where + ": entry '" + e.name + "': bad dtype");
    e.dtype = static_cast<Dtype>(dt);
    const auto rank = r.get_le<std::uint8_t>("rank");
    e.dims.resize(rank);
    std::int64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto dim = r.get_le<std::uint64_t>("dim");
      if (dim == 0 || dim > (1ull << 40))
        throw FormatError(where + ": entry '" + e.name + "': bad dim");
      e.dims[d] = static_cast<std::int64_t>(dim);
      numel *= e.dims[d];
    }
    const std::size_t bytes_needed = static_cast<std::size_t>(numel) * dtype_size(e.dtype);
    e.payload.resize(bytes_needed);
    r.get_bytes(e.payload.data(), bytes_needed, "payload");
    c.entries.push_back(std::move(e));
  }
  if (r.off < r.n) {
    const auto meta_len = r.get_le<std::uint32_t>("metadata length");
    c.meta.resize(meta_len);
    r.get_bytes(c.meta.data(), meta_len, "metadata");
  }
  if (r.off != r.n)
    throw FormatError(where + ": trailing garbage at byte offset " +
                      std::to_string(r.off));
  return c;
}

inline void container_write(const std::string& path, const Container& c) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open for writing: " + path);
  const std::string bytes = container_to_bytes(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed: " + path);
}

inline Container container_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return container_from_bytes(bytes.data(), bytes.size(), path);
}

}  // namespace baton
