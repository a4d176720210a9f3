// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "tape/core/autodiff.hpp"
#include "tape/core/checkpoint.hpp"
#include "tape/core/hash.hpp"
#include "tape/core/rng.hpp"
#include "tape/model/config.hpp"

namespace tape {

// ------------------------------------------------------------- tensor names

inline std::string block_name(int block, const std::string& leaf_name) {
  return "blocks." + std::to_string(block) + "." + leaf_name;
}

enum class Proj { kQ = 0, kK = 1, kV = 2 };

inline const char* proj_tag(Proj p) {
  switch (p) {
    case Proj::kQ: return "q";
    case Proj::kK: return "k";
    case Proj::kV: return "v";
  }
  throw Error("proj_tag: bad projection");
}

inline std::string attn_w_name(int block, Proj p) {
  return block_name(block, std::string("attn.w") + proj_tag(p));
}
inline std::string lora_a_name(int block, Proj p) {
  return block_name(block, std::string(proj_tag(p)) + ".A");
}
inline std::string lora_b_name(int block, Proj p) {
  return block_name(block, std::string(proj_tag(p)) + ".B");
}

// ---------------------------------------------------------------- backbone

// All shared transformer parameters as an ordered named-tensor table. Every
// shape is a pure function of ModelConfig; every initial value is a pure
// function of (name, seed), so init order can never change the result.
struct BackboneWeights {
  ModelConfig cfg;
  NamedTensors nt;

  const Ten<float>& t(const std::string& name) const { return nt.get(name); }
  Ten<float>& mutable_t(const std::string& name) {
    for (auto& [k, v] : nt.items)
      if (k == name) return v;
    throw Error("BackboneWeights: unknown tensor " + name);
  }
  std::uint64_t content_hash() const { return checkpoint_content_hash(nt); }
};

namespace detail {

inline Ten<float> seeded_normal(std::vector<int> shape, std::uint64_t seed,
                                const std::string& name, float stddev) {
  Rng rng = Rng(seed).fork(fnv1a64(name.data(), name.size()));
  return Ten<float>::normal(std::move(shape), rng, stddev);
}

}  // namespace detail

// Shapes of every backbone tensor, in canonical (serialization) order.
inline std::vector<std::pair<std::string, std::vector<int>>> backbone_schema(
    const ModelConfig& cfg) {
  const int d = cfg.d, pd = cfg.patch_dim(), ff = cfg.ffn_dim();
  std::vector<std::pair<std::string, std::vector<int>>> s;
  s.push_back({"patch_embed.w", {pd, d}});
  s.push_back({"patch_embed.b", {1, d}});
  s.push_back({"time_embed.w", {d, d}});
  s.push_back({"time_embed.b", {1, d}});
  if (cfg.text_tokens > 0) s.push_back({"text_embed", {cfg.text_tokens, d}});
  s.push_back({"cond_embed", {1, d}});
  for (int i = 0; i < cfg.depth; ++i) {
    s.push_back({block_name(i, "norm1.gain"), {1, d}});
    s.push_back({block_name(i, "norm1.bias"), {1, d}});
    for (Proj p : {Proj::kQ, Proj::kK, Proj::kV}) s.push_back({attn_w_name(i, p), {d, d}});
    s.push_back({block_name(i, "attn.wo"), {d, d}});
    s.push_back({block_name(i, "norm2.gain"), {1, d}});
    s.push_back({block_name(i, "norm2.bias"), {1, d}});
    s.push_back({block_name(i, "ffn.w1"), {d, ff}});
    s.push_back({block_name(i, "ffn.b1"), {1, ff}});
    s.push_back({block_name(i, "ffn.w2"), {ff, d}});
    s.push_back({block_name(i, "ffn.b2"), {1, d}});
  }
  s.push_back({"final_norm.gain", {1, d}});
  s.push_back({"final_norm.bias", {1, d}});
  s.push_back({"unembed.w", {d, pd}});
  s.push_back({"unembed.b", {1, pd}});
  return s;
}

// Initialization: matrices draw from N(0, 0.02^2) keyed by tensor name; norm
// gains start at one, and all biases plus the unembedding start at zero (a
// fresh model predicts zero velocity, which is also the stable starting
// point for flow-matching training).
inline BackboneWeights init_backbone(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BackboneWeights bw;
  bw.cfg = cfg;
  for (auto& [name, shape] : backbone_schema(cfg)) {
    const bool gain = name.ends_with("gain");
    const bool zero = name.ends_with(".b") || name.ends_with(".b1") ||
                      name.ends_with(".b2") || name.ends_with("bias") ||
                      name == "unembed.w";
    if (gain)
      bw.nt.add(name, Ten<float>::full(shape, 1.0f));
    else if (zero)
      bw.nt.add(name, Ten<float>::zeros(shape));
    else
      bw.nt.add(name, detail::seeded_normal(shape, seed, name, 0.02f));
  }
  return bw;
}

// ------------------------------------------------ shared motion-transfer set

// Trainable low-rank deltas on the shared Q/K/V that the forward pass applies
// to conditioning-branch rows only. Factor A draws from a seeded Gaussian and
// B starts zero, so a fresh delta set is a no-op and a model carrying one is
// byte-equivalent in behavior to the plain backbone.
struct MotionDelta {
  int rank = 0;
  float scale = 1.0f;
  NamedTensors nt;  // lora_a_name/lora_b_name scheme, one pair per (block, proj)

  std::uint64_t content_hash() const { return checkpoint_content_hash(nt); }
};

inline MotionDelta init_motion(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  MotionDelta md;
  md.rank = cfg.motion_rank;
  md.scale = cfg.motion_scale();
  for (int i = 0; i < cfg.depth; ++i)
    for (Proj p : {Proj::kQ, Proj::kK, Proj::kV}) {
      md.nt.add(lora_a_name(i, p),
                detail::seeded_normal({cfg.motion_rank, cfg.d}, seed,
                                      "motion." + lora_a_name(i, p), 0.02f));
      md.nt.add(lora_b_name(i, p), Ten<float>::zeros({cfg.d, cfg.motion_rank}));
    }
  return md;
}

// --------------------------------------------------------------- tape views

// A named-tensor table lifted onto a tape as leaf variables (cast to the
// tape's scalar type). Training binds with gradients enabled and reads them
// back by name; inference binds without.
template <class S>
struct Bound {
  std::unordered_map<std::string, Var<S>> vars;

  bool has(const std::string& name) const { return vars.count(name) != 0; }
  const Var<S>& at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw Error("Bound: unknown tensor " + name);
    return it->second;
  }
};

template <class S>
Bound<S> bind_tensors(Tape<S>& tp, const NamedTensors& nt, bool trainable) {
  Bound<S> b;
  for (const auto& [name, ten] : nt.items)
    b.vars.emplace(name, tp.leaf(ten.template cast<S>(), trainable));
  return b;
}

// Per-name trainability (used by stages that freeze most of the table).
template <class S, class Pred>
Bound<S> bind_tensors_if(Tape<S>& tp, const NamedTensors& nt, Pred trainable) {
  Bound<S> b;
  for (const auto& [name, ten] : nt.items)
    b.vars.emplace(name, tp.leaf(ten.template cast<S>(), trainable(name)));
  return b;
}

}  // namespace tape
