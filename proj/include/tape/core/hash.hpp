// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "tape/core/tensor.hpp"

namespace tape {

// FNV-1a, 64-bit. Used for byte-level freeze audits, config digests, and
// content hashes in reports. Stable across platforms and runs.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                             std::uint64_t h = 0xCBF29CE484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::string hex32(std::uint64_t h) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08llx",
                static_cast<unsigned long long>(h & 0xFFFFFFFFull));
  return std::string(buf);
}

// Content hash of a byte payload with a length-bound header, so equal bytes of
// different lengths cannot collide trivially.
inline std::uint64_t content_hash(const void* bytes, std::size_t len) {
  std::string hdr = "blob " + std::to_string(len);
  std::uint64_t h = fnv1a64(hdr.data(), hdr.size() + 1);  // include the NUL
  return fnv1a64(bytes, len, h);
}

inline std::uint64_t content_hash(const std::string& bytes) {
  return content_hash(bytes.data(), bytes.size());
}

template <class S>
std::uint64_t tensor_bytes_hash(const Ten<S>& t) {
  return fnv1a64(t.data.data(), t.data.size() * sizeof(S));
}

}  // namespace tape
