// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/core/mask.hpp"
#include "tape/model/config.hpp"

namespace tape {

// Which token stream a row belongs to. The branch decides projection routing
// and mask rules; the role refines it for streaming layouts (a reference
// exemplar is conditioning-branch, a target chunk is denoising-branch).
enum class Branch { kText, kCond, kDen };
enum class Role { kText, kRef, kCond, kTgt };

inline Branch branch_of(Role r) {
  switch (r) {
    case Role::kText: return Branch::kText;
    case Role::kRef:
    case Role::kCond: return Branch::kCond;
    case Role::kTgt: return Branch::kDen;
  }
  throw Error("branch_of: bad role");
}

struct TokenInfo {
  Branch branch;
  Role role;
  int chunk;  // streaming chunk index; single-chunk layouts use 0
  int frame;  // frame slot for positional features (text rows: -1)
  int gy;     // patch-grid coordinates (text rows: 0)
  int gx;
};

// An ordered description of every token row fed to the transformer. Pure
// data: masks, positional features, and projection routing are all derived
// from it.
struct TokenLayout {
  std::vector<TokenInfo> tokens;

  int n() const { return static_cast<int>(tokens.size()); }

  int count(Branch b) const {
    int c = 0;
    for (const auto& t : tokens) c += (t.branch == b) ? 1 : 0;
    return c;
  }

  std::vector<int> rows_of(Branch b) const {
    std::vector<int> out;
    for (int i = 0; i < n(); ++i)
      if (tokens[i].branch == b) out.push_back(i);
    return out;
  }

  // Runs of consecutive denoising rows sharing a chunk index, in row order.
  // Each run gets one timestep-embedding tile in the forward pass.
  std::vector<std::pair<int, int>> den_chunk_runs() const {
    std::vector<std::pair<int, int>> runs;  // (chunk, row count)
    for (const auto& t : tokens) {
      if (t.branch != Branch::kDen) continue;
      if (runs.empty() || runs.back().first != t.chunk) runs.emplace_back(t.chunk, 0);
      runs.back().second += 1;
    }
    return runs;
  }

  int max_chunk() const {
    int m = 0;
    for (const auto& t : tokens) m = std::max(m, t.chunk);
    return m;
  }
};

namespace detail {

inline void push_frame_tokens(TokenLayout& lay, const ModelConfig& cfg, Role role,
                              int chunk, int frame) {
  for (int gy = 0; gy < cfg.grid_h(); ++gy)
    for (int gx = 0; gx < cfg.grid_w(); ++gx)
      lay.tokens.push_back({branch_of(role), role, chunk, frame, gy, gx});
}

}  // namespace detail

// One-chunk layout for bidirectional (teacher-mode) passes: all prompt slots,
// then the conditioning frames, then the denoising frames, in fixed order
// [text | cond | den]. Conditioning and denoising tokens at the same
// (frame, gy, gx) share positional features; the branch embedding and mask
// keep the streams distinct.
inline TokenLayout teacher_layout(const ModelConfig& cfg, int cond_frames, int den_frames) {
  if (cond_frames < 0 || den_frames < 0)
    throw LayoutMismatch("teacher_layout: negative frame count");
  TokenLayout lay;
  for (int i = 0; i < cfg.text_tokens; ++i)
    lay.tokens.push_back({Branch::kText, Role::kText, 0, -1, 0, 0});
  for (int f = 0; f < cond_frames; ++f) detail::push_frame_tokens(lay, cfg, Role::kCond, 0, f);
  for (int f = 0; f < den_frames; ++f) detail::push_frame_tokens(lay, cfg, Role::kTgt, 0, f);
  if (lay.n() == 0) throw EmptyLayout("teacher_layout: no tokens");
  return lay;
}

// Visibility rule between branches for single-chunk (teacher-mode) attention.
// The one load-bearing asymmetry: denoising rows read conditioning rows, and
// conditioning rows never read denoising rows — so the conditioning stream is
// a function of (text, cond) content only. Prompt rows follow the same
// discipline by default (see ModelConfig::text_reads_den).
inline bool branch_visible(Branch q, Branch k, const ModelConfig& cfg) {
  if (!cfg.decoupled) return true;
  if (q == Branch::kDen) return true;
  if (k != Branch::kDen) return true;  // text and cond columns are open to all
  return q == Branch::kText ? cfg.text_reads_den : false;
}

inline AttentionMask build_branch_mask(const TokenLayout& lay, const ModelConfig& cfg) {
  if (lay.n() == 0) throw EmptyLayout("build_branch_mask: empty layout");
  const int n = lay.n();
  AttentionMask mask(n, n, false);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      mask.set(i, j, branch_visible(lay.tokens[i].branch, lay.tokens[j].branch, cfg));
  return mask;
}

}  // namespace tape
