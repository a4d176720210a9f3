// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// A scene is a deterministic procedural background (two-color pattern) plus an
// integer camera offset applied to the whole world (background and figure).
#pragma once

#include <string>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/synth/embodiment.hpp"

namespace tape::synth {

enum class Pattern { kChecker, kHStripes, kVStripes };

struct SceneSpec {
  std::string id;
  Pattern pattern = Pattern::kChecker;
  Rgb color_a, color_b;
  int period = 4;       // pattern cell size in pixels
  int camera_offset[2] = {0, 0};

  void validate() const {
    if (period < 1) throw Error("SceneSpec: period must be >= 1");
    if (id.empty()) throw Error("SceneSpec: empty id");
  }
};

namespace detail {
// Floor division that is exact for negative numerators (pattern lookups use
// world coordinates, which go negative left of / above the camera origin).
inline int floordiv(int a, int b) {
  int q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}
}  // namespace detail

// Background color at canvas pixel (ix, iy): the pattern lives in world
// coordinates, so the camera offset shifts it on screen.
inline Rgb background_pixel(const SceneSpec& sc, int ix, int iy) {
  const int wx = ix - sc.camera_offset[0];
  const int wy = iy - sc.camera_offset[1];
  int cell = 0;
  switch (sc.pattern) {
    case Pattern::kChecker:
      cell = detail::floordiv(wx, sc.period) + detail::floordiv(wy, sc.period);
      break;
    case Pattern::kHStripes:
      cell = detail::floordiv(wy, sc.period);
      break;
    case Pattern::kVStripes:
      cell = detail::floordiv(wx, sc.period);
      break;
  }
  const bool even = ((cell % 2) + 2) % 2 == 0;
  return even ? sc.color_a : sc.color_b;
}

inline std::vector<SceneSpec> default_scenes() {
  struct Row {
    const char* id;
    Pattern p;
    Rgb a, b;
    int period;
    int ox, oy;
  };
  const Row rows[10] = {
      {"S0", Pattern::kChecker, {0.10f, 0.10f, 0.15f}, {0.20f, 0.20f, 0.30f}, 4, 0, 0},
      {"S1", Pattern::kHStripes, {0.05f, 0.15f, 0.05f}, {0.15f, 0.30f, 0.15f}, 6, 1, -1},
      {"S2", Pattern::kVStripes, {0.20f, 0.10f, 0.05f}, {0.35f, 0.20f, 0.10f}, 5, -2, 1},
      {"S3", Pattern::kChecker, {0.12f, 0.05f, 0.20f}, {0.25f, 0.12f, 0.35f}, 8, 2, 2},
      {"S4", Pattern::kHStripes, {0.02f, 0.02f, 0.02f}, {0.18f, 0.18f, 0.18f}, 4, -1, 0},
      {"S5", Pattern::kVStripes, {0.15f, 0.15f, 0.00f}, {0.30f, 0.28f, 0.08f}, 7, 0, -2},
      {"S6", Pattern::kChecker, {0.00f, 0.12f, 0.18f}, {0.05f, 0.25f, 0.33f}, 6, -2, -2},
      {"S7", Pattern::kHStripes, {0.16f, 0.08f, 0.08f}, {0.30f, 0.16f, 0.16f}, 8, 1, 1},
      {"S8", Pattern::kVStripes, {0.08f, 0.08f, 0.20f}, {0.16f, 0.16f, 0.36f}, 4, 2, -1},
      {"S9", Pattern::kChecker, {0.14f, 0.14f, 0.14f}, {0.06f, 0.06f, 0.06f}, 5, -1, 2},
  };
  std::vector<SceneSpec> out;
  for (const Row& r : rows) {
    SceneSpec s;
    s.id = r.id;
    s.pattern = r.p;
    s.color_a = r.a;
    s.color_b = r.b;
    s.period = r.period;
    s.camera_offset[0] = r.ox;
    s.camera_offset[1] = r.oy;
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tape::synth
