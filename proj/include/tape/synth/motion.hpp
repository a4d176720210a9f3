// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural motion clips: per-joint sinusoidal angle trajectories plus a
// root translation track.  Five families (walk, wave, squat, reach, turn)
// articulate different joints; family parameters are drawn from a seeded
// generator so clips are a pure function of (seed, index).
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/core/rng.hpp"
#include "tape/synth/skeleton.hpp"

namespace tape::synth {

struct MotionClip {
  std::string id;
  int frames = 0;
  std::vector<double> angles;      // frames x joint_count, radians, row-major
  std::vector<double> root_track;  // frames x 2 pixel translation

  double ang(int t, int j, int joint_count) const {
    return angles[static_cast<std::size_t>(t) * joint_count + j];
  }

  void validate(int joint_count) const {
    if (frames < 2) throw Error("MotionClip: needs at least 2 frames");
    if (angles.size() != static_cast<std::size_t>(frames) * joint_count)
      throw TopologyMismatch("MotionClip: angle table does not match joint count");
    if (root_track.size() != static_cast<std::size_t>(frames) * 2)
      throw Error("MotionClip: root track must be frames x 2");
    for (double a : angles)
      if (!std::isfinite(a)) throw NonFiniteValue("MotionClip: non-finite angle");
  }
};

namespace detail {

constexpr double kPi = 3.14159265358979323846;

struct Osc {
  double amp = 0, cycles = 1, phase = 0;
  double at(int t, int frames) const {
    return amp * std::sin(2.0 * kPi * cycles * t / frames + phase);
  }
};

inline Osc draw_osc(Rng& rng, double amp_lo, double amp_hi, int max_cycles) {
  Osc o;
  o.amp = amp_lo + (amp_hi - amp_lo) * rng.next_unit();
  o.cycles = 1.0 + static_cast<double>(rng.next_below(static_cast<std::uint64_t>(max_cycles)));
  o.phase = 2.0 * kPi * rng.next_unit();
  return o;
}

}  // namespace detail

// Builds motion `index` of the registry seeded by `seed`.  Amplitudes are
// bounded so every default embodiment stays inside a 32x32 canvas for every
// default scene offset.
inline MotionClip build_motion(std::uint64_t seed, int index, int frames, int joint_count) {
  using detail::Osc;
  Rng rng = Rng(seed).fork(0x4D4F5449u + static_cast<std::uint64_t>(index));
  MotionClip m;
  m.id = "M" + std::string(index < 10 ? "0" : "") + std::to_string(index);
  m.frames = frames;
  m.angles.assign(static_cast<std::size_t>(frames) * joint_count, 0.0);
  m.root_track.assign(static_cast<std::size_t>(frames) * 2, 0.0);

  auto set = [&](int t, int j, double v) {
    m.angles[static_cast<std::size_t>(t) * joint_count + j] = v;
  };

  const int family = index / 4;
  switch (family) {
    case 0: {  // walk: antiphase shin swings, root drifts horizontally
      Osc shin = detail::draw_osc(rng, 0.25, 0.45, 2);
      Osc sway = detail::draw_osc(rng, 0.05, 0.12, 1);
      double drift = 1.0 + 1.5 * rng.next_unit();
      for (int t = 0; t < frames; ++t) {
        set(t, kLeftKnee, shin.at(t, frames));
        set(t, kRightKnee, -shin.at(t, frames));
        set(t, kRoot, sway.at(t, frames));
        m.root_track[static_cast<std::size_t>(t) * 2 + 0] =
            drift * std::sin(2.0 * detail::kPi * t / frames);
      }
      break;
    }
    case 1: {  // wave: one forearm oscillates strongly
      Osc arm = detail::draw_osc(rng, 0.35, 0.6, 3);
      Osc other = detail::draw_osc(rng, 0.05, 0.15, 1);
      bool left = rng.next_below(2) == 0;
      for (int t = 0; t < frames; ++t) {
        set(t, left ? kLeftElbow : kRightElbow, arm.at(t, frames));
        set(t, left ? kRightElbow : kLeftElbow, other.at(t, frames));
      }
      break;
    }
    case 2: {  // squat: root bobs vertically, knees bend symmetrically
      Osc knee = detail::draw_osc(rng, 0.2, 0.4, 2);
      double bob = 0.8 + 0.7 * rng.next_unit();
      double ph = 2.0 * detail::kPi * rng.next_unit();
      for (int t = 0; t < frames; ++t) {
        double k = knee.at(t, frames);
        set(t, kLeftKnee, k);
        set(t, kRightKnee, k);
        m.root_track[static_cast<std::size_t>(t) * 2 + 1] =
            bob * 0.5 * (1.0 - std::cos(2.0 * detail::kPi * t / frames + ph));
      }
      break;
    }
    case 3: {  // reach: both arms rise slowly, one forearm extends
      Osc lift = detail::draw_osc(rng, 0.2, 0.35, 1);
      Osc ext = detail::draw_osc(rng, 0.2, 0.4, 2);
      bool left = rng.next_below(2) == 0;
      for (int t = 0; t < frames; ++t) {
        set(t, kNeck, lift.at(t, frames));
        set(t, left ? kLeftElbow : kRightElbow, ext.at(t, frames));
      }
      break;
    }
    default: {  // turn: the whole figure leans back and forth
      Osc lean = detail::draw_osc(rng, 0.15, 0.3, 2);
      double dx = 0.5 + 1.0 * rng.next_unit();
      for (int t = 0; t < frames; ++t) {
        set(t, kRoot, lean.at(t, frames));
        m.root_track[static_cast<std::size_t>(t) * 2 + 0] =
            dx * std::sin(2.0 * detail::kPi * 2.0 * t / frames);
      }
      break;
    }
  }
  m.validate(joint_count);
  return m;
}

inline std::vector<MotionClip> default_motions(std::uint64_t seed, int count, int frames,
                                               int joint_count) {
  std::vector<MotionClip> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(build_motion(seed, i, frames, joint_count));
  return out;
}

}  // namespace tape::synth
