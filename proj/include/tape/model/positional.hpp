// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "tape/core/tensor.hpp"
#include "tape/model/config.hpp"
#include "tape/model/layout.hpp"

namespace tape {

namespace detail {

// Standard sin/cos pair encoding of a scalar position into `g` channels
// (g even): channel pair (2i, 2i+1) oscillates at 10000^(-2i/g).
inline void write_sinusoid(double* dst, int g, double p) {
  for (int i = 0; 2 * i < g; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(g));
    dst[2 * i] = std::sin(p * freq);
    dst[2 * i + 1] = std::cos(p * freq);
  }
}

}  // namespace detail

// Per-token positional features: the feature width splits into three even
// channel groups encoding (frame, gy, gx). Text rows carry no spatial
// position and stay zero (their learned slot embeddings do the work). A fixed
// derived constant, never trained or serialized.
template <class S>
Ten<S> position_features(const TokenLayout& lay, const ModelConfig& cfg) {
  const int d = cfg.d;
  const int g_spatial = 2 * (d / 6);       // even share for each of gy, gx
  const int g_frame = d - 2 * g_spatial;   // remainder (even since d is even)
  Ten<double> out({lay.n(), d});
  for (int i = 0; i < lay.n(); ++i) {
    const TokenInfo& t = lay.tokens[i];
    if (t.branch == Branch::kText) continue;
    double* row = out.data.data() + static_cast<std::size_t>(i) * d;
    detail::write_sinusoid(row, g_frame, static_cast<double>(t.frame));
    if (g_spatial > 0) {
      detail::write_sinusoid(row + g_frame, g_spatial, static_cast<double>(t.gy));
      detail::write_sinusoid(row + g_frame + g_spatial, g_spatial, static_cast<double>(t.gx));
    }
  }
  return out.template cast<S>();
}

// Sinusoidal features of a diffusion time t in [0,1], scaled to a pseudo-step
// position so nearby times stay distinguishable across the frequency bank.
template <class S>
Ten<S> time_features(double t, int d) {
  Ten<double> out({1, d});
  detail::write_sinusoid(out.data.data(), d, 1000.0 * t);
  return out.template cast<S>();
}

}  // namespace tape
