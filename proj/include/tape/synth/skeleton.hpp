// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// Articulated 2D stick-figure skeleton shared by every embodiment.  The
// topology is a tree rooted at joint 0; each non-root joint j owns the bone
// from parent(j) to j.  Per-bone arrays (lengths, widths, colors) are indexed
// by j-1.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tape/core/error.hpp"

namespace tape::synth {

struct Skeleton {
  int joint_count = 0;
  std::vector<int> parent;        // parent[0] == -1, tree rooted at joint 0
  std::vector<double> rest_angles;  // radians, one per joint

  int bone_count() const { return joint_count - 1; }

  void validate() const {
    if (joint_count < 2) throw TopologyMismatch("Skeleton: needs at least 2 joints");
    if (static_cast<int>(parent.size()) != joint_count ||
        static_cast<int>(rest_angles.size()) != joint_count)
      throw TopologyMismatch("Skeleton: per-joint arrays must match joint_count");
    if (parent[0] != -1) throw TopologyMismatch("Skeleton: joint 0 must be the root");
    for (int j = 1; j < joint_count; ++j)
      if (parent[j] < 0 || parent[j] >= j)
        throw TopologyMismatch("Skeleton: parents must precede children");
    for (double a : rest_angles)
      if (!std::isfinite(a)) throw TopologyMismatch("Skeleton: non-finite rest angle");
  }
};

// Named joint indices of the default humanoid figure.  Layout: a torso bone
// rises from the root to the neck (the head is a disc drawn at the neck), two
// two-bone arms hang from the neck, two two-bone legs hang from the root.
// 10 joints, 9 bones.
enum DefaultJoint : int {
  kRoot = 0,
  kNeck = 1,
  kLeftElbow = 2,
  kLeftHand = 3,
  kRightElbow = 4,
  kRightHand = 5,
  kLeftKnee = 6,
  kLeftFoot = 7,
  kRightKnee = 8,
  kRightFoot = 9,
};

// Default skeleton with rest offsets chosen so the zero-angle pose is an
// upright figure (canvas y grows downward, so "up" is angle -pi/2).
inline Skeleton default_skeleton() {
  constexpr double pi = 3.14159265358979323846;
  Skeleton s;
  s.joint_count = 10;
  s.parent = {-1, kRoot, kNeck, kLeftElbow, kNeck, kRightElbow,
              kRoot, kLeftKnee, kRoot, kRightKnee};
  // Desired absolute bone directions at rest, per non-root joint.
  const double abs_dir[10] = {
      /*root (unused)*/ 0.0,
      /*torso   */ -0.50 * pi,
      /*l upper */ 0.70 * pi,
      /*l fore  */ 0.60 * pi,
      /*r upper */ 0.30 * pi,
      /*r fore  */ 0.40 * pi,
      /*l thigh */ 0.62 * pi,
      /*l shin  */ 0.55 * pi,
      /*r thigh */ 0.38 * pi,
      /*r shin  */ 0.45 * pi,
  };
  s.rest_angles.assign(10, 0.0);
  s.rest_angles[0] = -0.5 * pi;  // root frame points up
  // Back out per-joint rest offsets so that, with all animation angles zero,
  // bone-into-j direction == abs_dir[j].  dir(into j) = cum(parent) + rest[j],
  // cum(j) = cum(parent) + rest[j].
  std::vector<double> cum(10, 0.0);
  cum[0] = s.rest_angles[0];
  for (int j = 1; j < 10; ++j) {
    s.rest_angles[j] = abs_dir[j] - cum[s.parent[j]];
    cum[j] = cum[s.parent[j]] + s.rest_angles[j];
  }
  s.validate();
  return s;
}

}  // namespace tape::synth
