// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "tape/core/error.hpp"

namespace tape {

// Boolean visibility matrix for attention: entry (i, j) says whether query row
// i may read key column j. Masked positions are excluded from the softmax
// reduction entirely (implemented as an additive -inf on the logits, which
// makes exp() exactly zero), so a masked value or key contributes nothing --
// bit-for-bit -- to any output row.
class AttentionMask {
 public:
  AttentionMask() = default;
  // Everything starts hidden; visibility is granted explicitly.
  AttentionMask(int rows, int cols, bool visible = false)
      : rows_(rows), cols_(cols),
        vis_(static_cast<std::size_t>(rows) * cols, visible ? 1 : 0) {
    if (rows <= 0 || cols <= 0) throw ShapeMismatch("AttentionMask: empty mask");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  bool vis(int i, int j) const {
    return vis_[static_cast<std::size_t>(i) * cols_ + j] != 0;
  }
  void set(int i, int j, bool v) {
    vis_[static_cast<std::size_t>(i) * cols_ + j] = v ? 1 : 0;
    ++version_;
  }

  const std::vector<std::uint8_t>& bytes() const { return vis_; }

  // Throws FullyMaskedRow if some query row has no visible key.
  void validate() const {
    for (int i = 0; i < rows_; ++i) {
      bool any = false;
      for (int j = 0; j < cols_ && !any; ++j) any = vis(i, j);
      if (!any)
        throw FullyMaskedRow("AttentionMask: query row " + std::to_string(i) +
                             " has no visible key");
    }
  }

  // Validation result is cached per mutation version, so hot paths can call
  // this on every use.
  void ensure_validated() const {
    if (validated_ver_ != version_) {
      validate();
      validated_ver_ = version_;
    }
  }

  std::int64_t visible_count() const {
    std::int64_t n = 0;
    for (auto b : vis_) n += b;
    return n;
  }

  bool all_visible() const {
    return visible_count() == static_cast<std::int64_t>(vis_.size());
  }

  // Additive logit representation: 0 where visible, -inf where masked.
  // Cached per scalar type; adding it to a logit matrix implements exclusion
  // exactly (finite + -inf == -inf, finite + 0.0 == finite).
  template <class S>
  const std::vector<S>& additive() const {
    std::vector<S>& buf = cache_buf<S>();
    std::uint64_t& built = cache_version<S>();
    if (built != version_ || buf.size() != vis_.size()) {
      buf.resize(vis_.size());
      const S neg_inf = -std::numeric_limits<S>::infinity();
      for (std::size_t i = 0; i < vis_.size(); ++i) buf[i] = vis_[i] ? S(0) : neg_inf;
      built = version_;
    }
    return buf;
  }

 private:
  template <class S>
  std::vector<S>& cache_buf() const {
    if constexpr (std::is_same_v<S, float>) return add_f_;
    else return add_d_;
  }
  template <class S>
  std::uint64_t& cache_version() const {
    if constexpr (std::is_same_v<S, float>) return ver_f_;
    else return ver_d_;
  }

  int rows_ = 0, cols_ = 0;
  std::vector<std::uint8_t> vis_;
  std::uint64_t version_ = 1;
  mutable std::vector<float> add_f_;
  mutable std::vector<double> add_d_;
  mutable std::uint64_t ver_f_ = 0, ver_d_ = 0;
  mutable std::uint64_t validated_ver_ = 0;
};

}  // namespace tape
