// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// An embodiment is pure appearance: limb proportions, stroke widths, colors
// and head size.  All embodiments share one skeleton topology, so the same
// joint-angle clip drives any of them.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/synth/skeleton.hpp"

namespace tape::synth {

struct Rgb {
  float r = 0, g = 0, b = 0;
};

struct EmbodimentSpec {
  std::string id;
  std::vector<double> limb_lengths;  // pixels, per bone (index = joint-1)
  std::vector<double> limb_widths;   // pixels, per bone
  std::vector<Rgb> colors;           // per bone; the head disc reuses the torso color
  double head_radius = 2.0;          // pixels; 0 draws no head disc

  void validate(const Skeleton& sk) const {
    const std::size_t bones = static_cast<std::size_t>(sk.bone_count());
    if (limb_lengths.size() != bones || limb_widths.size() != bones ||
        colors.size() != bones)
      throw TopologyMismatch("EmbodimentSpec: per-bone arrays must match the skeleton");
    for (double l : limb_lengths)
      if (!(l > 0)) throw InvalidLength("EmbodimentSpec: limb lengths must be positive");
    for (double w : limb_widths)
      if (!(w > 0)) throw InvalidLength("EmbodimentSpec: limb widths must be positive");
    if (!(head_radius >= 0)) throw InvalidLength("EmbodimentSpec: head radius must be >= 0");
    if (id.empty()) throw Error("EmbodimentSpec: empty id");
  }
};

// Five figures differing only in proportions, stroke width, palette and head
// size.  E4 is conventionally the held-out embodiment.
inline std::vector<EmbodimentSpec> default_embodiments() {
  // Base bone lengths (torso, l-upper, l-fore, r-upper, r-fore,
  // l-thigh, l-shin, r-thigh, r-shin).
  const std::array<double, 9> base = {4.0, 2.5, 2.5, 2.5, 2.5, 3.0, 3.0, 3.0, 3.0};
  struct Look {
    const char* id;
    double scale;
    double width;
    double head;
    Rgb torso, arm, leg;
  };
  const Look looks[5] = {
      {"E0", 1.00, 1.0, 2.0, {0.9f, 0.2f, 0.2f}, {0.9f, 0.6f, 0.2f}, {0.7f, 0.2f, 0.6f}},
      {"E1", 0.80, 1.6, 2.6, {0.2f, 0.8f, 0.3f}, {0.2f, 0.6f, 0.9f}, {0.1f, 0.5f, 0.5f}},
      {"E2", 1.15, 1.2, 1.6, {0.9f, 0.9f, 0.2f}, {0.8f, 0.4f, 0.9f}, {0.3f, 0.8f, 0.8f}},
      {"E3", 0.90, 2.2, 2.2, {0.9f, 0.5f, 0.7f}, {0.5f, 0.9f, 0.5f}, {0.9f, 0.8f, 0.6f}},
      {"E4", 1.10, 1.4, 2.8, {0.3f, 0.3f, 0.9f}, {0.9f, 0.3f, 0.5f}, {0.5f, 0.7f, 0.2f}},
  };
  std::vector<EmbodimentSpec> out;
  for (const Look& lk : looks) {
    EmbodimentSpec e;
    e.id = lk.id;
    for (double b : base) e.limb_lengths.push_back(b * lk.scale);
    e.limb_widths.assign(9, lk.width);
    e.colors = {lk.torso, lk.arm, lk.arm, lk.arm, lk.arm, lk.leg, lk.leg, lk.leg, lk.leg};
    e.head_radius = lk.head;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace tape::synth
