// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <new>
#include <string>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/core/rng.hpp"

namespace tape {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Allocator pinning every buffer to one cache-line alignment. SIMD kernels
// (Eigen's matrix-vector products, reductions, transcendentals) peel scalar
// elements until the pointer reaches a vector boundary, so summation order
// — and therefore low-bit rounding — depends on the buffer address. Giving
// every tensor the same alignment makes those kernels behave identically no
// matter where the heap placed the buffer, which the bit-determinism
// contracts rely on.
template <class S>
struct AlignedAllocator {
  static constexpr std::size_t kAlign = 64;
  using value_type = S;

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  S* allocate(std::size_t n) {
    return static_cast<S*>(::operator new(n * sizeof(S), std::align_val_t(kAlign)));
  }
  void deallocate(S* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kAlign));
  }

  template <class U>
  struct rebind {
    using other = AlignedAllocator<U>;
  };
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

template <class S>
using AlignedVec = std::vector<S, AlignedAllocator<S>>;

// Dense row-major tensor. Rank is carried by `shape`; data is one contiguous
// cache-line-aligned buffer, so reshapes are free and 2-D views map directly
// onto Eigen.
template <class S>
struct Ten {
  std::vector<int> shape;
  AlignedVec<S> data;

  Ten() = default;
  explicit Ten(std::vector<int> sh) : shape(std::move(sh)), data(count(shape), S(0)) {}
  Ten(std::vector<int> sh, std::vector<S> d) : shape(std::move(sh)), data(d.begin(), d.end()) {
    if (static_cast<std::int64_t>(data.size()) != count(shape))
      throw ShapeMismatch("Ten: data size does not match shape");
  }

  static std::int64_t count(const std::vector<int>& sh) {
    std::int64_t n = 1;
    for (int d : sh) {
      if (d < 0) throw ShapeMismatch("Ten: negative dimension");
      n *= d;
    }
    return n;
  }

  static Ten zeros(std::vector<int> sh) { return Ten(std::move(sh)); }
  static Ten full(std::vector<int> sh, S v) {
    Ten t(std::move(sh));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Ten normal(std::vector<int> sh, Rng& rng, S stddev) {
    Ten t(std::move(sh));
    for (auto& x : t.data) x = static_cast<S>(rng.next_normal_d()) * stddev;
    return t;
  }
  static Ten uniform(std::vector<int> sh, Rng& rng, S lo, S hi) {
    Ten t(std::move(sh));
    for (auto& x : t.data) x = lo + static_cast<S>(rng.next_unit()) * (hi - lo);
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }

  // 2-D accessors; the trailing dimension is the column count and everything
  // before it is flattened into rows.
  int cols() const {
    if (shape.empty()) throw ShapeMismatch("Ten: rank-0 tensor has no cols");
    return shape.back();
  }
  int rows() const {
    if (shape.empty()) return 0;
    std::int64_t r = numel() / (cols() == 0 ? 1 : cols());
    return static_cast<int>(cols() == 0 ? 0 : r);
  }

  S& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const S& at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // Multi-index access in row-major order with bounds checks.
  std::int64_t offset(std::initializer_list<int> idx) const {
    if (idx.size() != shape.size()) throw ShapeMismatch("Ten: index rank mismatch");
    std::int64_t off = 0;
    std::size_t k = 0;
    for (int i : idx) {
      if (i < 0 || i >= shape[k]) throw ShapeMismatch("Ten: index out of range");
      off = off * shape[k] + i;
      ++k;
    }
    return off;
  }
  S& at(std::initializer_list<int> idx) { return data[static_cast<std::size_t>(offset(idx))]; }
  const S& at(std::initializer_list<int> idx) const {
    return data[static_cast<std::size_t>(offset(idx))];
  }

  Ten reshaped(std::vector<int> sh) const {
    if (count(sh) != numel()) throw ShapeMismatch("Ten: reshape changes element count");
    Ten t;
    t.shape = std::move(sh);
    t.data = data;
    return t;
  }

  bool same_shape(const Ten& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const S& x : data)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  Eigen::Map<EMat<S>> mat() {
    return Eigen::Map<EMat<S>>(data.data(), rows(), cols());
  }
  Eigen::Map<const EMat<S>> mat() const {
    return Eigen::Map<const EMat<S>>(data.data(), rows(), cols());
  }
  Eigen::Map<EMat<S>> mat(int r, int c) {
    if (static_cast<std::int64_t>(r) * c != numel())
      throw ShapeMismatch("Ten: mat(r,c) does not cover the buffer");
    return Eigen::Map<EMat<S>>(data.data(), r, c);
  }
  Eigen::Map<const EMat<S>> mat(int r, int c) const {
    if (static_cast<std::int64_t>(r) * c != numel())
      throw ShapeMismatch("Ten: mat(r,c) does not cover the buffer");
    return Eigen::Map<const EMat<S>>(data.data(), r, c);
  }

  template <class T>
  Ten<T> cast() const {
    Ten<T> t;
    t.shape = shape;
    t.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<T>(data[i]);
    return t;
  }
};

inline std::string shape_str(const std::vector<int>& sh) {
  std::string s = "[";
  for (std::size_t i = 0; i < sh.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(sh[i]);
  }
  return s + "]";
}

}  // namespace tape
