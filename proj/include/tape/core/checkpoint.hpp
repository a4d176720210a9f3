// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/core/hash.hpp"
#include "tape/core/tensor.hpp"

namespace tape {

// Named-tensor container. One binary format for every persisted parameter set
// (backbone, shared-motion deltas, adapters, critic, discriminator).
//
// Layout (all integers little-endian):
//   bytes 0..3   magic "OMNH"
//   u32          format version (currently 1)
//   u32          entry count
//   per entry:   u32 name_len, name bytes (UTF-8),
//                u32 dtype code (0 = float32),
//                u32 rank, u64 dims[rank],
//                u64 byte offset of the payload from the start of the
//                    payload section
//   payload:     raw little-endian float32, entries back to back in table
//                order.
struct NamedTensors {
  std::vector<std::pair<std::string, Ten<float>>> items;

  void add(const std::string& name, Ten<float> t) {
    for (auto& it : items)
      if (it.first == name) throw Error("NamedTensors: duplicate name " + name);
    items.emplace_back(name, std::move(t));
  }

  const Ten<float>* find(const std::string& name) const {
    for (auto& it : items)
      if (it.first == name) return &it.second;
    return nullptr;
  }

  const Ten<float>& get(const std::string& name) const {
    const Ten<float>* t = find(name);
    if (!t) throw Error("NamedTensors: missing tensor " + name);
    return *t;
  }

  void sort_by_name() {
    std::sort(items.begin(), items.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
  const unsigned char* p;
  std::size_t len, at = 0;
  void need(std::size_t n) const {
    if (at + n > len) throw IoError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[at + i]) << (8 * i);
    at += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[at + i]) << (8 * i);
    at += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p + at), n);
    at += n;
    return s;
  }
};

}  // namespace detail

inline std::string serialize_checkpoint(const NamedTensors& nt) {
  std::string out;
  out += "OMNH";
  detail::put_u32(out, 1u);
  detail::put_u32(out, static_cast<std::uint32_t>(nt.items.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : nt.items) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, 0u);  // dtype: float32
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put_u64(out, static_cast<std::uint64_t>(d));
    detail::put_u64(out, offset);
    offset += t.data.size() * sizeof(float);
  }
  for (const auto& [name, t] : nt.items) {
    (void)name;
    const char* bytes = reinterpret_cast<const char*>(t.data.data());
    out.append(bytes, t.data.size() * sizeof(float));
  }
  return out;
}

inline NamedTensors deserialize_checkpoint(const std::string& bytes) {
  detail::ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()),
                       bytes.size()};
  if (r.str(4) != "OMNH") throw IoError("checkpoint: bad magic");
  std::uint32_t version = r.u32();
  if (version != 1) throw IoError("checkpoint: unsupported version");
  std::uint32_t count = r.u32();
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    std::uint32_t name_len = r.u32();
    e.name = r.str(name_len);
    std::uint32_t dtype = r.u32();
    if (dtype != 0) throw IoError("checkpoint: unknown dtype code");
    std::uint32_t rank = r.u32();
    for (std::uint32_t j = 0; j < rank; ++j)
      e.shape.push_back(static_cast<int>(r.u64()));
    e.offset = r.u64();
    entries.push_back(std::move(e));
  }
  const std::size_t payload_at = r.at;
  NamedTensors nt;
  for (auto& e : entries) {
    Ten<float> t(e.shape);
    const std::size_t nbytes = t.data.size() * sizeof(float);
    if (payload_at + e.offset + nbytes > bytes.size())
      throw IoError("checkpoint: payload out of bounds for " + e.name);
    std::memcpy(t.data.data(), bytes.data() + payload_at + e.offset, nbytes);
    nt.items.emplace_back(e.name, std::move(t));
  }
  return nt;
}

inline void save_checkpoint(const std::string& path, const NamedTensors& nt) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open for write: " + path);
  std::string bytes = serialize_checkpoint(nt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("checkpoint: write failed: " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

inline std::uint64_t checkpoint_content_hash(const NamedTensors& nt) {
  std::string bytes = serialize_checkpoint(nt);
  return content_hash(bytes.data(), bytes.size());
}

inline std::uint64_t file_content_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("content_hash: cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return content_hash(bytes.data(), bytes.size());
}

}  // namespace tape
