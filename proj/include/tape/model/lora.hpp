// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tape/core/checkpoint.hpp"
#include "tape/core/error.hpp"
#include "tape/core/rng.hpp"
#include "tape/model/config.hpp"
#include "tape/model/weights.hpp"

namespace tape {

// Per-embodiment low-rank adapter: one (A: r x d, B: d x r) factor pair per
// (block, projection in {Q,K,V}). The forward pass routes the resulting delta
// to denoising-branch rows only. A draws from a seeded Gaussian and B starts
// zero, so a freshly initialized adapter changes nothing.
struct LoRAAdapter {
  std::string embodiment_id;
  int rank = 0;
  float scale = 1.0f;
  NamedTensors nt;  // lora_a_name/lora_b_name scheme

  const Ten<float>& a(int block, Proj p) const { return nt.get(lora_a_name(block, p)); }
  const Ten<float>& b(int block, Proj p) const { return nt.get(lora_b_name(block, p)); }
  std::uint64_t content_hash() const { return checkpoint_content_hash(nt); }
};

inline LoRAAdapter init_adapter(const ModelConfig& cfg, const std::string& embodiment_id,
                                std::uint64_t seed) {
  cfg.validate();
  if (embodiment_id.empty() || embodiment_id.find('.') != std::string::npos)
    throw Error("init_adapter: embodiment id must be nonempty and dot-free");
  LoRAAdapter ad;
  ad.embodiment_id = embodiment_id;
  ad.rank = cfg.lora_rank;
  ad.scale = cfg.lora_scale();
  for (int i = 0; i < cfg.depth; ++i)
    for (Proj p : {Proj::kQ, Proj::kK, Proj::kV}) {
      ad.nt.add(lora_a_name(i, p),
                detail::seeded_normal({cfg.lora_rank, cfg.d}, seed,
                                      "adapter." + embodiment_id + "." + lora_a_name(i, p),
                                      0.02f));
      ad.nt.add(lora_b_name(i, p), Ten<float>::zeros({cfg.d, cfg.lora_rank}));
    }
  return ad;
}

// Materialized low-rank update: W + scale * (B @ A). The base projection is
// never written; callers get a fresh tensor.
inline Ten<float> apply_lora(const Ten<float>& w, const Ten<float>& a, const Ten<float>& b,
                             float scale) {
  const int d_in = w.rows(), d_out = w.cols();
  const int r = a.rows();
  if (a.cols() != d_out) throw ShapeMismatch("apply_lora: A must be r x d_out");
  if (b.rows() != d_in || b.cols() != r) throw ShapeMismatch("apply_lora: B must be d_in x r");
  Ten<float> out = w;
  out.mat(d_in, d_out).noalias() += scale * (b.mat(d_in, r) * a.mat(r, d_out));
  return out;
}

// The projection actually used for denoising-branch rows when an adapter is
// active on a given block/projection.
inline Ten<float> effective_projection(const BackboneWeights& bw, int block, Proj p,
                                       const LoRAAdapter* adapter) {
  const Ten<float>& w = bw.t(attn_w_name(block, p));
  if (adapter == nullptr) return w;
  return apply_lora(w, adapter->a(block, p), adapter->b(block, p), adapter->scale);
}

// Registry of embodiment adapters with at most one active at a time.
// Activation is stateless selection: it never copies or mutates tensors, so
// re-activating an id always yields byte-identical effective projections.
class AdapterBank {
 public:
  void register_adapter(LoRAAdapter ad) {
    if (ad.embodiment_id.empty()) throw Error("AdapterBank: empty embodiment id");
    if (adapters_.count(ad.embodiment_id))
      throw DuplicateEmbodiment("AdapterBank: duplicate id " + ad.embodiment_id);
    adapters_.emplace(ad.embodiment_id, std::move(ad));
  }

  void activate(const std::string& id) {
    if (!adapters_.count(id)) throw UnknownEmbodiment("AdapterBank: unknown id " + id);
    active_ = id;
  }
  void deactivate() { active_.reset(); }

  bool has(const std::string& id) const { return adapters_.count(id) != 0; }
  std::size_t size() const { return adapters_.size(); }

  const std::optional<std::string>& active_id() const { return active_; }
  const LoRAAdapter* active_adapter() const {
    return active_ ? &adapters_.at(*active_) : nullptr;
  }

  const LoRAAdapter& get(const std::string& id) const {
    auto it = adapters_.find(id);
    if (it == adapters_.end()) throw UnknownEmbodiment("AdapterBank: unknown id " + id);
    return it->second;
  }
  LoRAAdapter& get_mutable(const std::string& id) {
    auto it = adapters_.find(id);
    if (it == adapters_.end()) throw UnknownEmbodiment("AdapterBank: unknown id " + id);
    return it->second;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [id, ad] : adapters_) out.push_back(id);
    return out;
  }

  // On-disk form: every adapter's factors under "adapter.<id>." plus a
  // one-element "adapter.<id>.scale". Ordered by id, so bytes are stable.
  // The active selection is session state and is not persisted.
  NamedTensors to_named_tensors() const {
    NamedTensors nt;
    for (const auto& [id, ad] : adapters_) {
      const std::string prefix = "adapter." + id + ".";
      Ten<float> sc({1});
      sc.data[0] = ad.scale;
      nt.add(prefix + "scale", std::move(sc));
      for (const auto& [name, ten] : ad.nt.items) nt.add(prefix + name, ten);
    }
    return nt;
  }

  static AdapterBank from_named_tensors(const NamedTensors& nt) {
    AdapterBank bank;
    std::map<std::string, LoRAAdapter> staged;
    for (const auto& [name, ten] : nt.items) {
      if (name.rfind("adapter.", 0) != 0)
        throw IoError("AdapterBank: unexpected tensor " + name);
      const std::size_t id_end = name.find('.', 8);
      if (id_end == std::string::npos || id_end == 8)
        throw IoError("AdapterBank: malformed tensor name " + name);
      const std::string id = name.substr(8, id_end - 8);
      const std::string leaf_name = name.substr(id_end + 1);
      LoRAAdapter& ad = staged[id];
      ad.embodiment_id = id;
      if (leaf_name == "scale") {
        if (ten.numel() != 1) throw IoError("AdapterBank: bad scale tensor for " + id);
        ad.scale = ten.data[0];
      } else {
        ad.nt.add(leaf_name, ten);
      }
    }
    for (auto& [id, ad] : staged) {
      if (ad.nt.items.empty()) throw IoError("AdapterBank: no factors for " + id);
      if (ad.nt.items.size() % 6 != 0)
        throw IoError("AdapterBank: incomplete factor set for " + id);
      ad.rank = 0;
      for (const auto& [leaf_name, ten] : ad.nt.items) {
        const int r = leaf_name.ends_with(".A") ? ten.rows() : ten.cols();
        if (ad.rank == 0) ad.rank = r;
        if (r != ad.rank) throw IoError("AdapterBank: inconsistent rank for " + id);
      }
      bank.register_adapter(std::move(ad));
    }
    return bank;
  }

  void save(const std::string& path) const { save_checkpoint(path, to_named_tensors()); }
  static AdapterBank load(const std::string& path) {
    return from_named_tensors(load_checkpoint(path));
  }

 private:
  std::map<std::string, LoRAAdapter> adapters_;
  std::optional<std::string> active_;
};

}  // namespace tape
