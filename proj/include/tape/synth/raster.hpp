// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// Hard (non-antialiased) rasterization of stick figures over procedural
// backgrounds.  A pixel with center (ix+0.5, iy+0.5) is covered by a limb iff
// its distance to the bone segment is strictly less than width/2, and by the
// head iff strictly inside the disc.  No blending, no randomness: identical
// inputs produce bit-identical frames.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/synth/embodiment.hpp"
#include "tape/synth/kinematics.hpp"
#include "tape/synth/scene.hpp"
#include "tape/synth/skeleton.hpp"

namespace tape::synth {

struct RenderedSequence {
  int T = 0, H = 0, W = 0, C = 3;
  std::vector<float> frames;  // T x H x W x C in [0,1], row-major
  std::string embodiment_id, motion_id, scene_id;

  float& px(int t, int y, int x, int c) {
    return frames[((static_cast<std::size_t>(t) * H + y) * W + x) * C + c];
  }
  float px(int t, int y, int x, int c) const {
    return frames[((static_cast<std::size_t>(t) * H + y) * W + x) * C + c];
  }
  std::size_t numel() const { return static_cast<std::size_t>(T) * H * W * C; }
};

namespace detail {

inline double dist_point_segment(double px, double py, double x0, double y0, double x1,
                                 double y1) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - x0) * dx + (py - y0) * dy) / len2, 0.0, 1.0);
  const double cx = x0 + t * dx, cy = y0 + t * dy;
  return std::hypot(px - cx, py - cy);
}

}  // namespace detail

// Paints one segment onto one frame of `seq` (bounding box scan, strict
// distance test).  Coordinates are canvas pixels.
inline void draw_segment(RenderedSequence& seq, int t, double x0, double y0, double x1,
                         double y1, double width, Rgb color) {
  const double r = width * 0.5;
  const int lo_x = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - r - 1)));
  const int hi_x = std::min(seq.W - 1, static_cast<int>(std::ceil(std::max(x0, x1) + r + 1)));
  const int lo_y = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - r - 1)));
  const int hi_y = std::min(seq.H - 1, static_cast<int>(std::ceil(std::max(y0, y1) + r + 1)));
  for (int iy = lo_y; iy <= hi_y; ++iy)
    for (int ix = lo_x; ix <= hi_x; ++ix) {
      const double d =
          detail::dist_point_segment(ix + 0.5, iy + 0.5, x0, y0, x1, y1);
      if (d < r) {
        seq.px(t, iy, ix, 0) = color.r;
        seq.px(t, iy, ix, 1) = color.g;
        seq.px(t, iy, ix, 2) = color.b;
      }
    }
}

inline void draw_disc(RenderedSequence& seq, int t, double cx, double cy, double radius,
                      Rgb color) {
  const int lo_x = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
  const int hi_x = std::min(seq.W - 1, static_cast<int>(std::ceil(cx + radius + 1)));
  const int lo_y = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
  const int hi_y = std::min(seq.H - 1, static_cast<int>(std::ceil(cy + radius + 1)));
  for (int iy = lo_y; iy <= hi_y; ++iy)
    for (int ix = lo_x; ix <= hi_x; ++ix) {
      const double dx = ix + 0.5 - cx, dy = iy + 0.5 - cy;
      if (dx * dx + dy * dy < radius * radius) {
        seq.px(t, iy, ix, 0) = color.r;
        seq.px(t, iy, ix, 1) = color.g;
        seq.px(t, iy, ix, 2) = color.b;
      }
    }
}

// World -> canvas: world origin sits at the canvas center shifted by the
// scene's camera offset.
inline double canvas_x(const SceneSpec& sc, int W, double wx) {
  return 0.5 * W + sc.camera_offset[0] + wx;
}
inline double canvas_y(const SceneSpec& sc, int H, double wy) {
  return 0.5 * H + sc.camera_offset[1] + wy;
}

// Pure background sequence (what render() produces when nothing is painted).
inline RenderedSequence render_background(const SceneSpec& sc, int T, int H, int W) {
  sc.validate();
  RenderedSequence seq;
  seq.T = T;
  seq.H = H;
  seq.W = W;
  seq.C = 3;
  seq.frames.resize(seq.numel());
  seq.scene_id = sc.id;
  for (int t = 0; t < T; ++t)
    for (int iy = 0; iy < H; ++iy)
      for (int ix = 0; ix < W; ++ix) {
        const Rgb bg = background_pixel(sc, ix, iy);
        seq.px(t, iy, ix, 0) = bg.r;
        seq.px(t, iy, ix, 1) = bg.g;
        seq.px(t, iy, ix, 2) = bg.b;
      }
  return seq;
}

// Renders a retargeted clip.  Paint order per frame: background, bones in
// child-joint order, head disc last (torso color, skipped when the radius is
// zero).  Throws OutOfFrame if any joint's canvas position leaves
// [0,W) x [0,H) in any frame.
inline RenderedSequence render(const JointPositions& pos, const Skeleton& sk,
                               const EmbodimentSpec& emb, const SceneSpec& sc, int H, int W) {
  sk.validate();
  emb.validate(sk);
  sc.validate();
  if (pos.joint_count != sk.joint_count)
    throw TopologyMismatch("render: positions do not match the skeleton");

  RenderedSequence seq = render_background(sc, pos.frames, H, W);
  seq.embodiment_id = emb.id;

  for (int t = 0; t < pos.frames; ++t) {
    for (int j = 0; j < sk.joint_count; ++j) {
      const double jx = canvas_x(sc, W, pos.x(t, j));
      const double jy = canvas_y(sc, H, pos.y(t, j));
      if (!(jx >= 0.0 && jx < W && jy >= 0.0 && jy < H))
        throw OutOfFrame("render: joint " + std::to_string(j) + " at frame " +
                         std::to_string(t) + " leaves the canvas");
    }
    for (int j = 1; j < sk.joint_count; ++j) {
      const int p = sk.parent[j];
      draw_segment(seq, t, canvas_x(sc, W, pos.x(t, p)), canvas_y(sc, H, pos.y(t, p)),
                   canvas_x(sc, W, pos.x(t, j)), canvas_y(sc, H, pos.y(t, j)),
                   emb.limb_widths[static_cast<std::size_t>(j) - 1],
                   emb.colors[static_cast<std::size_t>(j) - 1]);
    }
    if (emb.head_radius > 0)
      draw_disc(seq, t, canvas_x(sc, W, pos.x(t, kNeck)), canvas_y(sc, H, pos.y(t, kNeck)),
                emb.head_radius, emb.colors[0]);
  }
  return seq;
}

// Per-pixel figure coverage (union over bones and head) for one frame,
// using exactly the same strict predicates as the painters above.
inline std::vector<std::uint8_t> figure_mask(const JointPositions& pos, const Skeleton& sk,
                                             const EmbodimentSpec& emb, const SceneSpec& sc,
                                             int t, int H, int W) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(H) * W, 0);
  for (int iy = 0; iy < H; ++iy)
    for (int ix = 0; ix < W; ++ix) {
      const double cx = ix + 0.5, cy = iy + 0.5;
      bool hit = false;
      for (int j = 1; j < sk.joint_count && !hit; ++j) {
        const int p = sk.parent[j];
        const double d = detail::dist_point_segment(
            cx, cy, canvas_x(sc, W, pos.x(t, p)), canvas_y(sc, H, pos.y(t, p)),
            canvas_x(sc, W, pos.x(t, j)), canvas_y(sc, H, pos.y(t, j)));
        hit = d < emb.limb_widths[static_cast<std::size_t>(j) - 1] * 0.5;
      }
      if (!hit) {
        const double dx = cx - canvas_x(sc, W, pos.x(t, kNeck));
        const double dy = cy - canvas_y(sc, H, pos.y(t, kNeck));
        hit = dx * dx + dy * dy < emb.head_radius * emb.head_radius;
      }
      mask[static_cast<std::size_t>(iy) * W + ix] = hit ? 1 : 0;
    }
  return mask;
}

}  // namespace tape::synth
