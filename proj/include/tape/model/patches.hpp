// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <vector>

#include "tape/core/autodiff.hpp"
#include "tape/model/config.hpp"

namespace tape {

// Frames <-> tokens are pure index permutations.
//
// Frame storage is (frame, y, x, channel) row-major. Token order is
// frame-major over the patch grid: token(f, gy, gx) = f*G + gy*grid_w + gx,
// and each token's vector is (py, px, channel) row-major over its patch. Both
// directions run through the same autodiff permute op, so gradients pass
// through patchification exactly.

inline std::int64_t frame_flat_index(const ModelConfig& cfg, int f, int y, int x, int c) {
  return ((static_cast<std::int64_t>(f) * cfg.height + y) * cfg.width + x) * cfg.channels + c;
}

// Map such that tokens.data[i] = frames.data[map[i]].
inline IndexMap patchify_map(const ModelConfig& cfg, int frames) {
  const int pd = cfg.patch_dim();
  auto map = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(frames) * cfg.patches_per_frame() * pd);
  std::size_t i = 0;
  for (int f = 0; f < frames; ++f)
    for (int gy = 0; gy < cfg.grid_h(); ++gy)
      for (int gx = 0; gx < cfg.grid_w(); ++gx)
        for (int py = 0; py < cfg.patch; ++py)
          for (int px = 0; px < cfg.patch; ++px)
            for (int c = 0; c < cfg.channels; ++c)
              (*map)[i++] = frame_flat_index(cfg, f, gy * cfg.patch + py,
                                             gx * cfg.patch + px, c);
  return map;
}

// Inverse permutation: frames.data[i] = tokens.data[map[i]].
inline IndexMap unpatchify_map(const ModelConfig& cfg, int frames) {
  IndexMap fwd = patchify_map(cfg, frames);
  auto inv = std::make_shared<std::vector<std::int64_t>>(fwd->size());
  for (std::size_t i = 0; i < fwd->size(); ++i)
    (*inv)[static_cast<std::size_t>((*fwd)[i])] = static_cast<std::int64_t>(i);
  return inv;
}

// frames: any shape covering frames*H*W*C elements -> {tokens, patch_dim}.
template <class S>
Var<S> patchify(const Var<S>& frame_pixels, const ModelConfig& cfg, int frames) {
  return permute(frame_pixels, patchify_map(cfg, frames),
                 {frames * cfg.patches_per_frame(), cfg.patch_dim()});
}

// tokens {tokens, patch_dim} -> {frames, H*W*C} (one row per frame).
template <class S>
Var<S> unpatchify(const Var<S>& tokens, const ModelConfig& cfg, int frames) {
  return permute(tokens, unpatchify_map(cfg, frames),
                 {frames, cfg.height * cfg.width * cfg.channels});
}

// Eager (non-tape) counterparts for data plumbing.
template <class S>
Ten<S> patchify_ten(const Ten<S>& frame_pixels, const ModelConfig& cfg, int frames) {
  IndexMap map = patchify_map(cfg, frames);
  if (static_cast<std::int64_t>(map->size()) != frame_pixels.numel())
    throw ShapeMismatch("patchify_ten: element count mismatch");
  Ten<S> out({frames * cfg.patches_per_frame(), cfg.patch_dim()});
  for (std::size_t i = 0; i < map->size(); ++i) out.data[i] = frame_pixels.data[(*map)[i]];
  return out;
}

template <class S>
Ten<S> unpatchify_ten(const Ten<S>& tokens, const ModelConfig& cfg, int frames) {
  IndexMap map = unpatchify_map(cfg, frames);
  if (static_cast<std::int64_t>(map->size()) != tokens.numel())
    throw ShapeMismatch("unpatchify_ten: element count mismatch");
  Ten<S> out({frames, cfg.height * cfg.width * cfg.channels});
  for (std::size_t i = 0; i < map->size(); ++i) out.data[i] = tokens.data[(*map)[i]];
  return out;
}

}  // namespace tape
