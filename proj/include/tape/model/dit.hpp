// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <vector>

#include "tape/core/autodiff.hpp"
#include "tape/core/mask.hpp"
#include "tape/model/config.hpp"
#include "tape/model/layout.hpp"
#include "tape/model/positional.hpp"
#include "tape/model/weights.hpp"

namespace tape {

// Optional per-block key/value context for incremental (cached) passes.
// When k_ctx/v_ctx are set, attention keys become [context | active rows] and
// the mask's columns must cover that widened span. When k_out/v_out are set,
// the active rows' projected K/V values are appended per block so a cache can
// commit them.
template <class S>
struct KvTap {
  const std::vector<Ten<S>>* k_ctx = nullptr;
  const std::vector<Ten<S>>* v_ctx = nullptr;
  std::vector<Ten<S>>* k_out = nullptr;
  std::vector<Ten<S>>* v_out = nullptr;
};

// A bound low-rank delta set (lora_a_name/lora_b_name scheme) destined for
// one branch's rows. `trainable` keeps the delta in the graph even while its
// factors are still exactly zero; untrainable all-zero deltas are skipped
// outright so they cannot perturb a single output bit.
template <class S>
struct LowRankHook {
  const Bound<S>* vars = nullptr;
  float scale = 1.0f;
  bool trainable = false;
};

template <class S>
struct DitHooks {
  LowRankHook<S> adapter;  // denoising rows (every row under lora_all_branches)
  LowRankHook<S> motion;   // conditioning rows
  KvTap<S>* kv = nullptr;
  std::function<void(int block, const Ten<S>& hidden)> after_block;
};

namespace detail {

template <class S>
bool all_zero(const Ten<S>& t) {
  for (const S& v : t.data)
    if (v != S(0)) return false;
  return true;
}

// Checks factor shapes for every (block, projection) and reports whether the
// delta must participate for that projection pair. Returns the common rank.
template <class S>
int validate_lowrank(const LowRankHook<S>& hook, const ModelConfig& cfg, const char* what) {
  if (hook.vars == nullptr) return 0;
  int rank = 0;
  for (int i = 0; i < cfg.depth; ++i)
    for (Proj p : {Proj::kQ, Proj::kK, Proj::kV}) {
      const std::string an = lora_a_name(i, p), bn = lora_b_name(i, p);
      if (!hook.vars->has(an) || !hook.vars->has(bn))
        throw AdapterShapeMismatch(std::string(what) + ": missing factor " + an);
      const Ten<S>& a = hook.vars->at(an).val();
      const Ten<S>& b = hook.vars->at(bn).val();
      if (a.cols() != cfg.d || b.rows() != cfg.d || a.rows() != b.cols())
        throw AdapterShapeMismatch(std::string(what) + ": bad factor shape at " + an);
      if (rank == 0) rank = a.rows();
      if (a.rows() != rank)
        throw AdapterShapeMismatch(std::string(what) + ": inconsistent rank at " + an);
    }
  return rank;
}

// base + scale * ((rows of h) @ B) @ A placed back at those rows. Empty row
// lists and provably zero frozen deltas leave `base` untouched (not merely
// plus-zero: untouched, so outputs stay byte-stable).
template <class S>
Var<S> add_lowrank_rows(Var<S> base, const Var<S>& h, const LowRankHook<S>& hook,
                        int block, Proj p, const std::vector<int>& rows, bool all_rows) {
  if (hook.vars == nullptr) return base;
  if (!all_rows && rows.empty()) return base;
  const Var<S>& a = hook.vars->at(lora_a_name(block, p));
  const Var<S>& b = hook.vars->at(lora_b_name(block, p));
  if (!hook.trainable && (all_zero(a.val()) || all_zero(b.val()))) return base;
  Var<S> hs = all_rows ? h : gather_rows(h, rows);
  Var<S> delta = scale(matmul(matmul(hs, b), a), static_cast<S>(hook.scale));
  if (all_rows) return add(base, delta);
  return add(base, scatter_rows(delta, rows, base.val().rows()));
}

}  // namespace detail

// One full pass of the branch-decoupled diffusion transformer over the rows
// described by `lay`.
//
//   - `w` is the bound backbone table (see backbone_schema).
//   - `cond_tokens` ({cond rows, patch_dim}) and `den_tokens` ({den rows,
//     patch_dim}) supply the patchified pixels for their branches; pass
//     nullptr when the layout has no rows of that branch. Prompt rows take
//     the learned slot table directly.
//   - `chunk_times` gives the diffusion time of each chunk's denoising rows
//     (single-chunk layouts pass one entry).
//   - `mask` has one row per layout row; its columns span [context | rows]
//     when a KV context is injected, else just the rows.
//
// Returns the per-token velocity prediction for denoising rows, in layout
// order ({den rows, patch_dim}).
template <class S>
Var<S> dit_forward(Tape<S>& tp, const ModelConfig& cfg, const Bound<S>& w,
                   const TokenLayout& lay, const AttentionMask& mask,
                   const Var<S>* cond_tokens, const Var<S>* den_tokens,
                   const std::vector<double>& chunk_times, const DitHooks<S>& hooks = {}) {
  cfg.validate();
  const int n = lay.n();
  if (n == 0) throw EmptyLayout("dit_forward: empty layout");
  const int pd = cfg.patch_dim();

  const std::vector<int> text_rows = lay.rows_of(Branch::kText);
  const std::vector<int> cond_rows = lay.rows_of(Branch::kCond);
  const std::vector<int> den_rows = lay.rows_of(Branch::kDen);
  const int n_text = static_cast<int>(text_rows.size());
  const int n_cond = static_cast<int>(cond_rows.size());
  const int n_den = static_cast<int>(den_rows.size());

  if (n_text != 0 && n_text != cfg.text_tokens)
    throw LayoutMismatch("dit_forward: layout text rows must match the slot table");
  if ((n_cond > 0) != (cond_tokens != nullptr))
    throw LayoutMismatch("dit_forward: conditioning tokens do not match layout");
  if ((n_den > 0) != (den_tokens != nullptr))
    throw LayoutMismatch("dit_forward: denoising tokens do not match layout");
  if (cond_tokens &&
      (cond_tokens->val().rows() != n_cond || cond_tokens->val().cols() != pd))
    throw LayoutMismatch("dit_forward: conditioning token shape mismatch");
  if (den_tokens && (den_tokens->val().rows() != n_den || den_tokens->val().cols() != pd))
    throw LayoutMismatch("dit_forward: denoising token shape mismatch");
  for (const auto& t : lay.tokens)
    if (t.branch == Branch::kDen &&
        (t.chunk < 0 || t.chunk >= static_cast<int>(chunk_times.size())))
      throw LayoutMismatch("dit_forward: missing chunk time");
  for (double t : chunk_times)
    if (!(t >= 0.0 && t <= 1.0)) throw Error("dit_forward: diffusion time outside [0,1]");

  detail::validate_lowrank(hooks.adapter, cfg, "adapter");
  detail::validate_lowrank(hooks.motion, cfg, "motion delta");

  // Widened key span when a per-block context is injected.
  int n_ctx = 0;
  if (hooks.kv && hooks.kv->k_ctx) {
    const auto& kc = *hooks.kv->k_ctx;
    const auto& vc = hooks.kv->v_ctx ? *hooks.kv->v_ctx : kc;
    if (static_cast<int>(kc.size()) != cfg.depth || static_cast<int>(vc.size()) != cfg.depth)
      throw LayoutMismatch("dit_forward: context must cover every block");
    n_ctx = kc[0].rows();
    for (int i = 0; i < cfg.depth; ++i)
      if (kc[i].rows() != n_ctx || kc[i].cols() != cfg.d || vc[i].rows() != n_ctx ||
          vc[i].cols() != cfg.d)
        throw LayoutMismatch("dit_forward: inconsistent context shapes");
  }
  if (mask.rows() != n || mask.cols() != n_ctx + n)
    throw LayoutMismatch("dit_forward: mask does not span the key columns");

  // ---- token embedding assembly -------------------------------------------
  Var<S> x = tp.leaf(position_features<S>(lay, cfg), false);
  if (n_text > 0) x = add(x, scatter_rows(w.at("text_embed"), text_rows, n));
  if (n_cond > 0) {
    Var<S> seg = add_bias(matmul(*cond_tokens, w.at("patch_embed.w")), w.at("patch_embed.b"));
    seg = add_bias(seg, w.at("cond_embed"));
    x = add(x, scatter_rows(seg, cond_rows, n));
  }
  if (n_den > 0) {
    Var<S> seg = add_bias(matmul(*den_tokens, w.at("patch_embed.w")), w.at("patch_embed.b"));
    // Timestep conditioning enters denoising rows once, before block 1; rows
    // of different chunks may sit at different diffusion times.
    std::map<double, Var<S>> time_vec;  // per distinct time, a {1, d} row
    std::vector<Var<S>> tiles;
    for (const auto& [chunk, count] : lay.den_chunk_runs()) {
      const double t = chunk_times[static_cast<std::size_t>(chunk)];
      auto it = time_vec.find(t);
      if (it == time_vec.end()) {
        Var<S> feats = tp.leaf(time_features<S>(t, cfg.d), false);
        Var<S> row = add_bias(matmul(feats, w.at("time_embed.w")), w.at("time_embed.b"));
        it = time_vec.emplace(t, row).first;
      }
      Var<S> ones = tp.leaf(Ten<S>::full({count, 1}, S(1)), false);
      tiles.push_back(matmul(ones, it->second));
    }
    seg = add(seg, tiles.size() == 1 ? tiles[0] : concat_rows(tiles));
    x = add(x, scatter_rows(seg, den_rows, n));
  }

  // ---- transformer blocks --------------------------------------------------
  const bool lora_all = cfg.lora_all_branches;
  for (int i = 0; i < cfg.depth; ++i) {
    Var<S> h = layer_norm(x, w.at(block_name(i, "norm1.gain")), w.at(block_name(i, "norm1.bias")));
    Var<S> q = matmul(h, w.at(attn_w_name(i, Proj::kQ)));
    Var<S> k = matmul(h, w.at(attn_w_name(i, Proj::kK)));
    Var<S> v = matmul(h, w.at(attn_w_name(i, Proj::kV)));
    q = detail::add_lowrank_rows(q, h, hooks.adapter, i, Proj::kQ, den_rows, lora_all);
    k = detail::add_lowrank_rows(k, h, hooks.adapter, i, Proj::kK, den_rows, lora_all);
    v = detail::add_lowrank_rows(v, h, hooks.adapter, i, Proj::kV, den_rows, lora_all);
    q = detail::add_lowrank_rows(q, h, hooks.motion, i, Proj::kQ, cond_rows, false);
    k = detail::add_lowrank_rows(k, h, hooks.motion, i, Proj::kK, cond_rows, false);
    v = detail::add_lowrank_rows(v, h, hooks.motion, i, Proj::kV, cond_rows, false);

    if (hooks.kv) {
      if (hooks.kv->k_out) hooks.kv->k_out->push_back(k.val());
      if (hooks.kv->v_out) hooks.kv->v_out->push_back(v.val());
    }
    Var<S> k_full = k, v_full = v;
    if (n_ctx > 0) {
      k_full = concat_rows({tp.leaf((*hooks.kv->k_ctx)[i], false), k});
      v_full = concat_rows({tp.leaf((*hooks.kv->v_ctx)[i], false), v});
    }
    Var<S> att = masked_attention_mh(q, k_full, v_full, mask, cfg.heads);
    x = add(x, matmul(att, w.at(block_name(i, "attn.wo"))));

    Var<S> h2 =
        layer_norm(x, w.at(block_name(i, "norm2.gain")), w.at(block_name(i, "norm2.bias")));
    Var<S> f = add_bias(matmul(h2, w.at(block_name(i, "ffn.w1"))), w.at(block_name(i, "ffn.b1")));
    f = gelu(f);
    f = add_bias(matmul(f, w.at(block_name(i, "ffn.w2"))), w.at(block_name(i, "ffn.b2")));
    x = add(x, f);

    if (hooks.after_block) hooks.after_block(i, x.val());
  }

  if (n_den == 0) return tp.leaf(Ten<S>({0, pd}), false);
  Var<S> hf = layer_norm(x, w.at("final_norm.gain"), w.at("final_norm.bias"));
  Var<S> den_h = gather_rows(hf, den_rows);
  return add_bias(matmul(den_h, w.at("unembed.w")), w.at("unembed.b"));
}

}  // namespace tape
