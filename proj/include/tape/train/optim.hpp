// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tape/core/checkpoint.hpp"
#include "tape/core/error.hpp"
#include "tape/core/tensor.hpp"

namespace tape {

// Named gradients for one optimization step, in a fixed caller-chosen order.
using NamedGrads = std::vector<std::pair<std::string, Ten<float>>>;

// Mutable pointers into parameter tensors that live in their owning tables
// (backbone, motion delta, adapters), addressed by qualified name. The view
// never owns storage; the tables must outlive it and must not reallocate.
struct ParamView {
  std::vector<std::pair<std::string, Ten<float>*>> entries;

  void add(const std::string& name, Ten<float>& t) {
    if (find(name)) throw Error("ParamView: duplicate parameter " + name);
    entries.emplace_back(name, &t);
  }

  void add_table(const std::string& prefix, NamedTensors& nt) {
    for (auto& [leaf, ten] : nt.items) add(prefix + leaf, ten);
  }

  Ten<float>* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return t;
    return nullptr;
  }
};

// Global L2 norm across every gradient tensor. Double accumulation in the
// given order, so the result never depends on buffer addresses.
inline double global_grad_norm(const NamedGrads& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (float v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

// Rescales the gradients in place so their global norm is at most `max_norm`
// (<= 0 disables clipping). Gradients at or below the threshold keep their
// exact bytes. Returns the pre-clip norm.
inline double clip_global_norm(NamedGrads& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (max_norm <= 0.0 || norm <= max_norm) return norm;
  const double s = max_norm / norm;
  for (auto& [name, g] : grads)
    for (auto& v : g.data) v = static_cast<float>(static_cast<double>(v) * s);
  return norm;
}

// Sums per-parameter gradients over micro-batches and divides by the number
// of completed samples. An empty gradient tensor counts as all zeros: a
// parameter can sit outside one sample's subgraph and still belong to the
// step's update set. Accumulators are double; name order is first-seen.
class GradAccumulator {
 public:
  void accumulate(const std::string& name, const Ten<float>& grad,
                  const std::vector<int>& shape) {
    Slot& s = slot(name, shape);
    if (grad.data.empty()) return;  // never-touched leaf: zero contribution
    if (grad.shape != s.shape)
      throw ShapeMismatch("GradAccumulator: gradient shape changed for " + name);
    for (std::size_t i = 0; i < s.sum.size(); ++i)
      s.sum[i] += static_cast<double>(grad.data[i]);
  }

  void end_sample() { ++samples_; }
  int samples() const { return samples_; }

  NamedGrads mean() const {
    if (samples_ == 0) throw Error("GradAccumulator: no samples recorded");
    NamedGrads out;
    out.reserve(slots_.size());
    for (const auto& [name, s] : slots_) {
      Ten<float> g(s.shape);
      for (std::size_t i = 0; i < s.sum.size(); ++i)
        g.data[i] = static_cast<float>(s.sum[i] / samples_);
      out.emplace_back(name, std::move(g));
    }
    return out;
  }

 private:
  struct Slot {
    std::vector<int> shape;
    std::vector<double> sum;
  };

  Slot& slot(const std::string& name, const std::vector<int>& shape) {
    auto it = index_.find(name);
    if (it != index_.end()) {
      Slot& s = slots_[it->second].second;
      if (s.shape != shape)
        throw ShapeMismatch("GradAccumulator: parameter shape changed for " + name);
      return s;
    }
    index_.emplace(name, slots_.size());
    slots_.emplace_back(name, Slot{shape, std::vector<double>(Ten<float>(shape).data.size(), 0.0)});
    return slots_.back().second;
  }

  std::vector<std::pair<std::string, Slot>> slots_;
  std::unordered_map<std::string, std::size_t> index_;
  int samples_ = 0;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: applied to the parameter, not the gradient
};

// Adaptive moment estimation with bias-corrected moments and decoupled weight
// decay. Moment state and update arithmetic are double precision in a fixed
// element order, so a rerun from the same seed reproduces every parameter
// bit-exactly; lr = 0 leaves parameter bytes untouched.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.lr >= 0.0) || !std::isfinite(cfg_.lr))
      throw ConfigError("AdamW: learning rate must be finite and >= 0");
    if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0))
      throw ConfigError("AdamW: betas must lie in [0,1)");
    if (!(cfg_.eps > 0.0)) throw ConfigError("AdamW: eps must be positive");
    if (cfg_.weight_decay < 0.0) throw ConfigError("AdamW: weight decay must be >= 0");
  }

  // One optimization step: every named gradient updates its parameter.
  void step(const ParamView& params, const NamedGrads& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      Ten<float>* p = params.find(name);
      if (!p) throw Error("AdamW: gradient for unknown parameter " + name);
      if (!p->same_shape(g)) throw ShapeMismatch("AdamW: gradient shape mismatch for " + name);
      Slot& s = slot(name, g.data.size());
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double gi = static_cast<double>(g.data[i]);
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        const double pi = static_cast<double>(p->data[i]);
        const double upd = mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * pi;
        p->data[i] = static_cast<float>(pi - cfg_.lr * upd);
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

  // Sorted names of every parameter this optimizer has ever stepped. The
  // freeze audits compare it against a stage's designated trainable set.
  std::vector<std::string> update_set() const {
    std::vector<std::string> out;
    out.reserve(state_.size());
    for (const auto& [name, s] : state_) out.push_back(name);
    return out;
  }

 private:
  struct Slot {
    std::vector<double> m, v;
  };

  Slot& slot(const std::string& name, std::size_t n) {
    auto it = state_.find(name);
    if (it == state_.end())
      it = state_.emplace(name, Slot{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}).first;
    if (it->second.m.size() != n)
      throw ShapeMismatch("AdamW: parameter size changed for " + name);
    return it->second;
  }

  AdamWConfig cfg_;
  std::map<std::string, Slot> state_;
  std::int64_t t_ = 0;
};

}  // namespace tape
