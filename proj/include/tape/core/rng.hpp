// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace tape {

// Deterministic 64-bit PRNG (splitmix64 core). Every random draw in the
// library flows through an explicitly threaded Rng instance; there is no
// global generator. The stream is bit-stable across platforms, which the
// stdlib distributions do not guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float next_unitf() { return static_cast<float>(next_unit()); }

  // Standard normal via Box-Muller; two fresh draws per sample (no cached
  // spare, so the stream position is a pure function of the call count).
  double next_normal_d() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  float next_normal() { return static_cast<float>(next_normal_d()); }

  // Uniform integer in [0, n); n must be > 0. Fixed-point multiply (bias is
  // below 2^-64 per draw, irrelevant at toy scale and fully deterministic).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Independent child stream; a pure function of (constructor seed, tag), so
  // fork order and parent draw position do not matter.
  Rng fork(std::uint64_t tag) const {
    std::uint64_t z = seed_ ^ (0xD1B54A32D192ED03ull * (tag + 1));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace tape
