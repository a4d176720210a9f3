// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "tape/core/autodiff.hpp"
#include "tape/model/config.hpp"
#include "tape/model/dit.hpp"
#include "tape/model/layout.hpp"
#include "tape/model/weights.hpp"

namespace tape {

// Rectified-flow interpolant: x_t = (1-t) * clean + t * noise. The mix is
// computed in double per element before the cast back to S.
template <class S>
Ten<S> flow_interpolate(const Ten<S>& clean, const Ten<S>& noise, double t) {
  if (!clean.same_shape(noise)) throw ShapeMismatch("flow_interpolate: shape mismatch");
  Ten<S> xt(clean.shape);
  for (std::size_t i = 0; i < xt.data.size(); ++i)
    xt.data[i] = static_cast<S>((1.0 - t) * static_cast<double>(clean.data[i]) +
                                t * static_cast<double>(noise.data[i]));
  return xt;
}

// The constant velocity that carries x_t from clean data to noise: eps - x0.
// It is the regression target of the denoising objective below.
template <class S>
Ten<S> velocity_target(const Ten<S>& clean, const Ten<S>& noise) {
  if (!clean.same_shape(noise)) throw ShapeMismatch("velocity_target: shape mismatch");
  Ten<S> v(clean.shape);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = noise.data[i] - clean.data[i];
  return v;
}

// Denoising score-matching loss in the rectified-flow parameterization.
//
// Builds a single-chunk teacher-mode pass (prompt slots, then optional
// conditioning rows, then denoising rows), feeds x_t = (1-t)*x0 + t*eps to
// the denoising branch at diffusion time t, and returns the mean squared
// error between the predicted velocity and the target eps - x0 over every
// denoising token. `clean_tokens` and `noise` are {frames*patches, patch_dim};
// `cond_tokens` may be null for an unconditioned pass. Adapter / motion-delta
// hooks pass through to the transformer unchanged.
template <class S>
Var<S> dsm_loss(Tape<S>& tp, const ModelConfig& cfg, const Bound<S>& w,
                const Ten<S>& clean_tokens, const Ten<S>* cond_tokens, double t,
                const Ten<S>& noise, const DitHooks<S>& hooks = {}) {
  cfg.validate();
  if (!(t > 0.0 && t < 1.0))
    throw Error("dsm_loss: diffusion time must lie inside (0,1)");
  const int pd = cfg.patch_dim();
  const int ppf = cfg.patches_per_frame();
  auto frames_of = [&](const Ten<S>& tok, const char* what) {
    if (tok.shape.size() != 2 || tok.cols() != pd || tok.rows() == 0 || tok.rows() % ppf != 0)
      throw ShapeMismatch(std::string("dsm_loss: ") + what +
                          " must be {frames * patches_per_frame, patch_dim}");
    return tok.rows() / ppf;
  };
  const int den_frames = frames_of(clean_tokens, "clean tokens");
  const int cond_frames = cond_tokens ? frames_of(*cond_tokens, "conditioning tokens") : 0;
  if (!clean_tokens.same_shape(noise)) throw ShapeMismatch("dsm_loss: noise shape mismatch");

  const TokenLayout lay = teacher_layout(cfg, cond_frames, den_frames);
  const AttentionMask mask = build_branch_mask(lay, cfg);

  Var<S> den = tp.leaf(flow_interpolate(clean_tokens, noise, t), /*requires_grad=*/false);
  Var<S> cond;
  if (cond_tokens) cond = tp.leaf(*cond_tokens, /*requires_grad=*/false);
  Var<S> pred = dit_forward(tp, cfg, w, lay, mask, cond_tokens ? &cond : nullptr, &den,
                            {t}, hooks);
  return mse_const(pred, velocity_target(clean_tokens, noise));
}

}  // namespace tape
