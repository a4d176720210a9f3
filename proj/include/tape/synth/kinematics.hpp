// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward kinematics.  Angle bookkeeping per joint j:
//   cum(j)       = cum(parent) + rest[j] + ang[j]        (cum(root) likewise)
//   dir(into j)  = cum(parent) + rest[j]
//   pos(j)       = pos(parent) + length[j] * (cos dir, sin dir)
// A joint's animation angle articulates the bones leaving it, so the clip's
// angle at the root turns the whole figure and a knee angle swings the shin.
// The per-joint rest offset lands on the joint's own incoming bone, which is
// what lets sibling limbs leave a shared parent in different directions.
#pragma once

#include <cmath>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/synth/embodiment.hpp"
#include "tape/synth/motion.hpp"
#include "tape/synth/skeleton.hpp"

namespace tape::synth {

struct JointPositions {
  int frames = 0;
  int joint_count = 0;
  std::vector<double> xy;  // frames x joint_count x 2

  double x(int t, int j) const { return xy[(static_cast<std::size_t>(t) * joint_count + j) * 2]; }
  double y(int t, int j) const {
    return xy[(static_cast<std::size_t>(t) * joint_count + j) * 2 + 1];
  }
};

// Applies one motion clip to one embodiment: identical angles, embodiment-
// specific bone lengths, root following the clip's translation track.
inline JointPositions retarget(const MotionClip& motion, const Skeleton& sk,
                               const EmbodimentSpec& emb) {
  sk.validate();
  emb.validate(sk);
  if (motion.angles.size() != static_cast<std::size_t>(motion.frames) * sk.joint_count)
    throw TopologyMismatch("retarget: clip joint count does not match the skeleton");
  motion.validate(sk.joint_count);

  JointPositions out;
  out.frames = motion.frames;
  out.joint_count = sk.joint_count;
  out.xy.assign(static_cast<std::size_t>(motion.frames) * sk.joint_count * 2, 0.0);

  std::vector<double> cum(static_cast<std::size_t>(sk.joint_count), 0.0);
  for (int t = 0; t < motion.frames; ++t) {
    cum[0] = sk.rest_angles[0] + motion.ang(t, 0, sk.joint_count);
    const double rx = motion.root_track[static_cast<std::size_t>(t) * 2 + 0];
    const double ry = motion.root_track[static_cast<std::size_t>(t) * 2 + 1];
    out.xy[(static_cast<std::size_t>(t) * sk.joint_count + 0) * 2 + 0] = rx;
    out.xy[(static_cast<std::size_t>(t) * sk.joint_count + 0) * 2 + 1] = ry;
    for (int j = 1; j < sk.joint_count; ++j) {
      const int p = sk.parent[j];
      const double dir = cum[p] + sk.rest_angles[j];
      cum[j] = dir + motion.ang(t, j, sk.joint_count);
      const double len = emb.limb_lengths[static_cast<std::size_t>(j) - 1];
      const std::size_t base = (static_cast<std::size_t>(t) * sk.joint_count + j) * 2;
      const std::size_t pb = (static_cast<std::size_t>(t) * sk.joint_count + p) * 2;
      out.xy[base + 0] = out.xy[pb + 0] + len * std::cos(dir);
      out.xy[base + 1] = out.xy[pb + 1] + len * std::sin(dir);
    }
  }
  return out;
}

}  // namespace tape::synth
