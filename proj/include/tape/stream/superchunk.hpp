// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "tape/core/error.hpp"
#include "tape/core/mask.hpp"
#include "tape/model/config.hpp"
#include "tape/model/layout.hpp"

namespace tape {

// ------------------------------------------------------- super-chunk layout
//
// The streaming student orders its tokens as
//
//   [ ref | cond_0 | tgt_0 | ... | cond_M | tgt_M ]
//
// where ref is an appearance exemplar of the target embodiment, cond_i is the
// i-th source-video chunk and tgt_i the i-th generated chunk. This abstract
// form carries only spans, roles and chunk indices; the model-level token
// layout (streaming_token_layout below) adds prompt rows, frame numbers and
// grid coordinates on top of the same ordering rules.

struct Span {
  int begin = 0;
  int len = 0;
  int end() const { return begin + len; }
  bool contains(int i) const { return i >= begin && i < end(); }
};

struct SuperChunkLayout {
  Span ref;
  std::vector<Span> cond, tgt;  // one per chunk, equal lengths within each set
  std::vector<Role> roles;      // per token
  std::vector<int> chunks;      // per token (ref rows use 0)

  int n() const { return static_cast<int>(roles.size()); }
  int chunk_count() const { return static_cast<int>(cond.size()); }
};

// Builds the layout for chunks 0..M. All span lengths are in tokens and must
// be at least one; the model-level layout translates frames into these spans.
inline SuperChunkLayout build_superchunk_layout(int M, int ref_len, int cond_len,
                                                int tgt_len) {
  if (M < 0) throw InvalidLength("build_superchunk_layout: M must be >= 0");
  if (ref_len < 1 || cond_len < 1 || tgt_len < 1)
    throw InvalidLength("build_superchunk_layout: span lengths must be >= 1");

  SuperChunkLayout lay;
  auto push = [&](Role role, int chunk, int len) {
    Span s{lay.n(), len};
    for (int i = 0; i < len; ++i) {
      lay.roles.push_back(role);
      lay.chunks.push_back(chunk);
    }
    return s;
  };
  lay.ref = push(Role::kRef, 0, ref_len);
  for (int c = 0; c <= M; ++c) {
    lay.cond.push_back(push(Role::kCond, c, cond_len));
    lay.tgt.push_back(push(Role::kTgt, c, tgt_len));
  }
  return lay;
}

// ------------------------------------------------------ visibility function
//
// Block-causal visibility between (role, chunk) classified rows:
//   - prompt columns are open to every query (static context, like the
//     bidirectional rule), and prompt queries read the context available when
//     their keys/values are committed: prompt rows, ref rows and the first
//     condition chunk;
//   - ref queries read ref rows only;
//   - cond_i queries read ref and cond_j for j <= i, and never any tgt
//     column, so the conditioning stream stays a function of conditioning
//     content alone even across committed chunks;
//   - tgt_i queries read ref, cond_j and tgt_j for j < i, cond_i, and tgt_i
//     itself; every column of a later chunk is hidden.
inline bool causal_role_visible(Role q_role, int q_chunk, Role k_role, int k_chunk) {
  if (k_role == Role::kText) return true;
  switch (q_role) {
    case Role::kText:
      return k_role == Role::kRef || (k_role == Role::kCond && k_chunk == 0);
    case Role::kRef:
      return k_role == Role::kRef;
    case Role::kCond:
      return k_role == Role::kRef || (k_role == Role::kCond && k_chunk <= q_chunk);
    case Role::kTgt:
      return k_role == Role::kRef ||
             ((k_role == Role::kCond || k_role == Role::kTgt) && k_chunk <= q_chunk);
  }
  throw Error("causal_role_visible: bad role");
}

inline AttentionMask build_block_causal_mask(const SuperChunkLayout& lay) {
  if (lay.n() == 0) throw EmptyLayout("build_block_causal_mask: empty layout");
  const int n = lay.n();
  AttentionMask mask(n, n, false);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      mask.set(i, j,
               causal_role_visible(lay.roles[i], lay.chunks[i], lay.roles[j], lay.chunks[j]));
  return mask;
}

// --------------------------------------------------- model-level token form

// Streaming token layout over real video geometry:
//
//   [ text | ref | cond_0 | tgt_0 | ... | cond_{chunks-1} | tgt_{chunks-1} ]
//
// Prompt rows come first (they are committed together with the first chunk),
// then ref_frames exemplar frames on the conditioning branch, then the
// interleaved chunk spans. Chunk c covers frames [c*chunk_frames,
// (c+1)*chunk_frames); ref rows use exemplar-local frame numbers. With
// ref_frames = 0 and chunks = 1 this is exactly the single-chunk
// bidirectional layout, which pins the distillation loss to the
// teacher objective in the no-history case.
inline TokenLayout streaming_token_layout(const ModelConfig& cfg, int chunks,
                                          int ref_frames) {
  cfg.validate();
  if (chunks < 1 || chunks > cfg.chunk_count())
    throw InvalidLength("streaming_token_layout: chunk count outside [1, frames/chunk_frames]");
  if (ref_frames < 0) throw InvalidLength("streaming_token_layout: negative ref frames");

  TokenLayout lay;
  for (int i = 0; i < cfg.text_tokens; ++i)
    lay.tokens.push_back({Branch::kText, Role::kText, 0, -1, 0, 0});
  for (int f = 0; f < ref_frames; ++f) detail::push_frame_tokens(lay, cfg, Role::kRef, 0, f);
  for (int c = 0; c < chunks; ++c) {
    for (int f = 0; f < cfg.chunk_frames; ++f)
      detail::push_frame_tokens(lay, cfg, Role::kCond, c, c * cfg.chunk_frames + f);
    for (int f = 0; f < cfg.chunk_frames; ++f)
      detail::push_frame_tokens(lay, cfg, Role::kTgt, c, c * cfg.chunk_frames + f);
  }
  if (lay.n() == 0) throw EmptyLayout("streaming_token_layout: no tokens");
  return lay;
}

// Full block-causal mask over a streaming token layout (n x n).
inline AttentionMask build_streaming_mask(const TokenLayout& lay) {
  if (lay.n() == 0) throw EmptyLayout("build_streaming_mask: empty layout");
  const int n = lay.n();
  AttentionMask mask(n, n, false);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const TokenInfo& q = lay.tokens[i];
      const TokenInfo& k = lay.tokens[j];
      mask.set(i, j, causal_role_visible(q.role, q.chunk, k.role, k.chunk));
    }
  return mask;
}

// Mask for an incremental pass: query rows are layout rows [row0, row0+nrows)
// and key columns span [0, row0+nrows) in layout order -- the committed
// prefix followed by the active rows, matching dit_forward's widened key span
// when a key/value context is injected.
inline AttentionMask build_streaming_mask_sliced(const TokenLayout& lay, int row0,
                                                 int nrows) {
  if (row0 < 0 || nrows < 1 || row0 + nrows > lay.n())
    throw InvalidLength("build_streaming_mask_sliced: row window outside the layout");
  AttentionMask mask(nrows, row0 + nrows, false);
  for (int i = 0; i < nrows; ++i)
    for (int j = 0; j < row0 + nrows; ++j) {
      const TokenInfo& q = lay.tokens[row0 + i];
      const TokenInfo& k = lay.tokens[j];
      mask.set(i, j, causal_role_visible(q.role, q.chunk, k.role, k.chunk));
    }
  return mask;
}

}  // namespace tape
