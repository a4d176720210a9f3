// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tape/core/error.hpp"

namespace tape {

// Hyperparameters of the two-branch diffusion transformer. Every tensor shape
// in the model is a pure function of this struct, so checkpoints can be
// validated against it on load.
struct ModelConfig {
  // Transformer core.
  int d = 64;      // token feature width
  int heads = 4;   // attention heads (d % heads == 0)
  int depth = 4;   // transformer blocks

  // Video geometry. Frames are patchified into square pixel patches; one
  // token per (frame, grid-y, grid-x) cell.
  int frames = 16;
  int height = 32;
  int width = 32;
  int channels = 3;
  int patch = 4;         // patch side length (divides height and width)
  int chunk_frames = 4;  // frames per streaming chunk (divides frames)

  // Prompt tokens: a fixed number of learned slots (ids 0..text_tokens-1).
  int text_tokens = 4;

  // Per-embodiment low-rank adapters on the denoising branch's Q/K/V.
  int lora_rank = 4;
  float lora_alpha = 4.0f;  // effective scale = alpha / rank

  // Shared motion-transfer parameters: a low-rank delta on the shared Q/K/V
  // that applies only to conditioning-branch rows, plus the conditioning
  // branch embedding.
  int motion_rank = 8;
  float motion_alpha = 8.0f;

  // Branch wiring flags.
  //  - decoupled: the asymmetric branch mask (denoising rows may read
  //    conditioning rows, never the reverse). false = all-visible ablation.
  //  - text_reads_den: whether prompt rows may read denoising rows. Off by
  //    default: any text->den edge makes conditioning activations depend on
  //    denoising tokens from depth 2 onward (cond rows read text rows), which
  //    breaks the cross-branch isolation guarantee this model is built
  //    around. Kept as a flag for ablations.
  //  - lora_all_branches: ablation that applies adapter deltas to every row
  //    instead of denoising rows only.
  bool decoupled = true;
  bool text_reads_den = false;
  bool lora_all_branches = false;

  // How the shared motion-transfer parameters are realized: as the low-rank
  // conditioning-row delta described above (default), or by unfreezing all
  // shared backbone weights (ablation; changes the trainable partition, not
  // the forward pass).
  enum class MotionMode { kLowRankDelta, kAllShared };
  MotionMode motion_mode = MotionMode::kLowRankDelta;

  int head_dim() const { return d / heads; }
  int ffn_dim() const { return 4 * d; }
  int patch_dim() const { return patch * patch * channels; }
  int grid_h() const { return height / patch; }
  int grid_w() const { return width / patch; }
  int patches_per_frame() const { return grid_h() * grid_w(); }
  int chunk_tokens() const { return chunk_frames * patches_per_frame(); }
  int chunk_count() const { return frames / chunk_frames; }
  float lora_scale() const { return lora_alpha / static_cast<float>(lora_rank); }
  float motion_scale() const { return motion_alpha / static_cast<float>(motion_rank); }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("ModelConfig: " + msg); };
    if (d <= 0 || d % 2 != 0) fail("feature width must be positive and even");
    if (heads <= 0 || d % heads != 0) fail("heads must divide the feature width");
    if (depth <= 0) fail("depth must be >= 1");
    if (frames <= 0 || height <= 0 || width <= 0 || channels <= 0)
      fail("video dimensions must be positive");
    if (patch <= 0 || height % patch != 0 || width % patch != 0)
      fail("patch must divide height and width");
    if (chunk_frames <= 0 || frames % chunk_frames != 0)
      fail("chunk_frames must divide frames");
    if (text_tokens < 0) fail("text_tokens must be >= 0");
    if (lora_rank < 1 || lora_rank > d) fail("lora_rank must be in [1, d]");
    if (motion_rank < 1 || motion_rank > d) fail("motion_rank must be in [1, d]");
    if (!(lora_alpha > 0.0f) || !(motion_alpha > 0.0f)) fail("alpha values must be positive");
  }
};

}  // namespace tape
