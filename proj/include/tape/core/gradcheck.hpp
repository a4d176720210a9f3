// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "tape/core/autodiff.hpp"

namespace tape {

// Central-difference gradient verification.
//
// `fn` maps (tape, x) -> scalar Var. The analytic gradient is taken from one
// taped backward pass at `point`; the numeric gradient perturbs one coordinate
// at a time by +-eps and re-evaluates fn without grad. Returns the max over
// coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Throws NonFiniteValue if any evaluation is non-finite.
template <class S, class Fn>
S grad_check(Fn&& fn, const Ten<S>& point, S eps) {
  if (eps <= S(0)) throw Error("grad_check: eps must be positive");

  Ten<S> analytic;
  {
    Tape<S> tape;
    Var<S> x = tape.leaf(point, /*requires_grad=*/true);
    Var<S> loss = fn(tape, x);
    if (loss.numel() != 1) throw ShapeMismatch("grad_check: fn must return a scalar");
    if (!loss.val().all_finite())
      throw NonFiniteValue("grad_check: fn returned a non-finite value");
    tape.backward(loss);
    analytic = x.grad().data.empty() ? Ten<S>::zeros(point.shape) : x.grad();
  }

  auto eval = [&fn](const Ten<S>& p) -> S {
    Tape<S> tape;
    Var<S> x = tape.leaf(p, /*requires_grad=*/false);
    Var<S> loss = fn(tape, x);
    if (loss.numel() != 1) throw ShapeMismatch("grad_check: fn must return a scalar");
    S v = loss.val().data[0];
    if (!std::isfinite(static_cast<double>(v)))
      throw NonFiniteValue("grad_check: fn returned a non-finite value");
    return v;
  };

  S max_rel = S(0);
  Ten<S> p = point;
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    const S orig = p.data[i];
    p.data[i] = orig + eps;
    S fp = eval(p);
    p.data[i] = orig - eps;
    S fm = eval(p);
    p.data[i] = orig;
    S numeric = (fp - fm) / (S(2) * eps);
    S a = analytic.data[i];
    S denom = std::max({std::abs(a), std::abs(numeric), S(1e-8)});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace tape
