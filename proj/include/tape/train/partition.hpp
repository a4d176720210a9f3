// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "tape/core/hash.hpp"
#include "tape/model/config.hpp"
#include "tape/model/lora.hpp"
#include "tape/model/weights.hpp"

namespace tape {

// Qualified parameter names. Every trainable tensor in a model bundle gets a
// unique name formed from its owning table: "backbone.<leaf>",
// "motion.<leaf>", "adapter.<embodiment>.<leaf>". Stage drivers, the
// optimizer, and the freeze audits all speak this namespace.
inline constexpr const char* kBackboneParamPrefix = "backbone.";
inline constexpr const char* kMotionParamPrefix = "motion.";
inline std::string adapter_param_prefix(const std::string& embodiment_id) {
  return "adapter." + embodiment_id + ".";
}

// Static split of every trainable tensor into the three training regimes:
// the frozen-after-pretraining backbone base, the shared motion-transfer set
// (the conditioning-branch embedding plus the low-rank conditioning-row
// deltas; under MotionMode::kAllShared the whole backbone moves here), and
// one per-embodiment adapter set. The sets are disjoint and together cover
// the bundle exactly; membership never changes during a run.
struct ParameterPartition {
  std::vector<std::string> backbone_base;
  std::vector<std::string> shared_motion;
  std::map<std::string, std::vector<std::string>> adapters;  // embodiment -> names

  std::vector<std::string> all_names() const {
    std::vector<std::string> out = backbone_base;
    out.insert(out.end(), shared_motion.begin(), shared_motion.end());
    for (const auto& [id, names] : adapters) out.insert(out.end(), names.begin(), names.end());
    return out;
  }
};

inline ParameterPartition make_partition(const ModelConfig& cfg,
                                         const std::vector<std::string>& embodiment_ids) {
  cfg.validate();
  ParameterPartition part;
  const bool all_shared = cfg.motion_mode == ModelConfig::MotionMode::kAllShared;
  for (const auto& [name, shape] : backbone_schema(cfg)) {
    const bool shared = all_shared || name == "cond_embed";
    (shared ? part.shared_motion : part.backbone_base)
        .push_back(kBackboneParamPrefix + name);
  }
  for (int i = 0; i < cfg.depth; ++i)
    for (Proj p : {Proj::kQ, Proj::kK, Proj::kV}) {
      part.shared_motion.push_back(kMotionParamPrefix + lora_a_name(i, p));
      part.shared_motion.push_back(kMotionParamPrefix + lora_b_name(i, p));
    }
  for (const auto& id : embodiment_ids) {
    auto& names = part.adapters[id];
    for (int i = 0; i < cfg.depth; ++i)
      for (Proj p : {Proj::kQ, Proj::kK, Proj::kV}) {
        names.push_back(adapter_param_prefix(id) + lora_a_name(i, p));
        names.push_back(adapter_param_prefix(id) + lora_b_name(i, p));
      }
  }
  return part;
}

// Asserts that the partition's sets are pairwise disjoint and cover the
// concrete tables exactly (no missing, no extra, no duplicated names).
inline void validate_partition(const ParameterPartition& part, const BackboneWeights& bw,
                               const MotionDelta& md, const AdapterBank& bank) {
  std::set<std::string> claimed;
  for (const auto& name : part.all_names())
    if (!claimed.insert(name).second)
      throw ConfigError("partition: name claimed twice: " + name);

  std::set<std::string> actual;
  for (const auto& [n, t] : bw.nt.items) actual.insert(kBackboneParamPrefix + n);
  for (const auto& [n, t] : md.nt.items) actual.insert(kMotionParamPrefix + n);
  for (const auto& id : bank.ids())
    for (const auto& [n, t] : bank.get(id).nt.items)
      actual.insert(adapter_param_prefix(id) + n);

  for (const auto& name : claimed)
    if (!actual.count(name))
      throw ConfigError("partition: names a tensor absent from the bundle: " + name);
  for (const auto& name : actual)
    if (!claimed.count(name))
      throw ConfigError("partition: leaves a bundle tensor unclaimed: " + name);
}

// Per-tensor byte hashes of a model bundle under qualified names. Comparing
// two snapshots tells exactly which tensors changed between checkpoints.
inline std::map<std::string, std::uint64_t> parameter_hashes(const BackboneWeights& bw,
                                                             const MotionDelta* md = nullptr,
                                                             const AdapterBank* bank = nullptr) {
  std::map<std::string, std::uint64_t> h;
  for (const auto& [n, t] : bw.nt.items) h[kBackboneParamPrefix + n] = tensor_bytes_hash(t);
  if (md)
    for (const auto& [n, t] : md->nt.items) h[kMotionParamPrefix + n] = tensor_bytes_hash(t);
  if (bank)
    for (const auto& id : bank->ids())
      for (const auto& [n, t] : bank->get(id).nt.items)
        h[adapter_param_prefix(id) + n] = tensor_bytes_hash(t);
  return h;
}

// Names (from `names`) whose hashes differ between two snapshots. A name
// missing from either snapshot counts as changed.
inline std::vector<std::string> changed_names(
    const std::map<std::string, std::uint64_t>& before,
    const std::map<std::string, std::uint64_t>& after,
    const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (const auto& n : names) {
    auto b = before.find(n);
    auto a = after.find(n);
    if (b == before.end() || a == after.end() || b->second != a->second) out.push_back(n);
  }
  return out;
}

}  // namespace tape
