// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tape/core/rng.hpp"
#include "tape/model/lora.hpp"
#include "tape/model/patches.hpp"
#include "tape/model/weights.hpp"
#include "tape/synth/dataset.hpp"
#include "tape/synth/raster.hpp"
#include "tape/train/loss.hpp"
#include "tape/train/optim.hpp"
#include "tape/train/partition.hpp"

namespace tape {

// The training stages consume rendered data directly; pull the dataset types
// into this namespace so stage signatures and call sites read uniformly.
using synth::PairedSample;
using synth::RenderedSequence;

// Hyperparameters shared by every training stage. lr = 0 and steps = 0 are
// legal: they make a stage a provable no-op, which the bit-identity contracts
// rely on. Effective samples per optimization step = batch * accumulation;
// each sample runs its own forward/backward pass and gradients are averaged.
struct TrainConfig {
  double lr = 1e-3;
  int steps = 200;
  int batch = 1;
  int accumulation = 4;
  double t_min = 0.001;  // diffusion times are uniform on (t_min, t_max)
  double t_max = 0.999;
  double clip_norm = 1.0;  // global-norm gradient clip; <= 0 disables
  std::uint64_t seed = 0;
  int log_every = 1;  // record every k-th step's loss (k >= 1)

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("TrainConfig: " + m); };
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail("learning rate must be finite and >= 0");
    if (steps < 0) fail("steps must be >= 0");
    if (batch < 1) fail("batch must be >= 1");
    if (accumulation < 1) fail("accumulation must be >= 1");
    if (!(t_min > 0.0 && t_max < 1.0 && t_min < t_max))
      fail("diffusion-time window must satisfy 0 < t_min < t_max < 1");
    if (!std::isfinite(clip_norm)) fail("clip norm must be finite");
    if (log_every < 1) fail("log_every must be >= 1");
  }
};

// Append-only per-step loss records. Stages append; callers persist.
struct LossRecord {
  int step;
  std::string stage;
  std::string active_embodiment;  // "-" when no adapter is active
  double loss;
};

struct LossLog {
  std::vector<LossRecord> records;

  void add(int step, std::string stage, std::string active, double loss) {
    records.push_back({step, std::move(stage), std::move(active), loss});
  }

  // One tab-separated line per record: step, stage, active embodiment, loss.
  void write_tsv(std::ostream& os) const {
    char buf[64];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof(buf), "%.10g", r.loss);
      os << r.step << '\t' << r.stage << '\t' << r.active_embodiment << '\t' << buf << '\n';
    }
  }
};

inline void append_loss_log(const std::string& path, const LossLog& log) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("loss log: cannot open for append: " + path);
  log.write_tsv(f);
  f.flush();
  if (!f) throw IoError("loss log: write failed: " + path);
}

// ------------------------------------------------------------ data plumbing

inline void check_sequence_dims(const RenderedSequence& seq, const ModelConfig& cfg) {
  if (seq.T != cfg.frames || seq.H != cfg.height || seq.W != cfg.width ||
      seq.C != cfg.channels)
    throw ShapeMismatch("training: sequence dimensions do not match the model config (" +
                        seq.embodiment_id + "-" + seq.motion_id + "-" + seq.scene_id + ")");
}

// First `frames` frames of a rendered sequence, patchified to
// {frames * patches_per_frame, patch_dim}.
inline Ten<float> sequence_tokens(const RenderedSequence& seq, const ModelConfig& cfg,
                                  int frames) {
  if (frames < 1 || frames > seq.T)
    throw ShapeMismatch("sequence_tokens: frame count outside the sequence");
  Ten<float> px({frames, seq.H * seq.W * seq.C});
  std::copy_n(seq.frames.begin(), px.data.size(), px.data.begin());
  return patchify_ten(px, cfg, frames);
}

// -------------------------------------------------------- stage driver core
//
// Per-step randomness protocol (documented so independent oracles can replay
// a step exactly): the step's stream is Rng(seed).fork(0x53544550).fork(step).
// Draw order within the step, all from that stream:
//   1. shared-motion training only: the target-embodiment index, uniform over
//      the sorted distinct target ids;
//   2. per sample k = 0 .. batch*accumulation-1, in order:
//      a. the sample index, uniform over the stage's pool;
//      b. the diffusion time, t_min + (t_max - t_min) * next_unit();
//      c. the noise tensor, Ten<float>::normal({den rows, patch_dim}, ., 1).

namespace detail {

inline constexpr std::uint64_t kStepStreamTag = 0x53544550ull;

inline Rng step_stream(const TrainConfig& tc, int step) {
  return Rng(tc.seed).fork(kStepStreamTag).fork(static_cast<std::uint64_t>(step));
}

inline double draw_time(Rng& rng, const TrainConfig& tc) {
  return tc.t_min + (tc.t_max - tc.t_min) * rng.next_unit();
}

}  // namespace detail

// ------------------------------------------------------- stage 0: backbone

// Pretrains every backbone parameter with the denoising objective on plain
// single-embodiment sequences. Each sample conditions on the sequence's own
// opening chunk (weak self-conditioning) and denoises the full sequence.
// Initialization is init_backbone(cfg, tc.seed).
inline BackboneWeights pretrain_backbone(const std::vector<RenderedSequence>& data,
                                         const ModelConfig& cfg, const TrainConfig& tc,
                                         LossLog* log = nullptr) {
  cfg.validate();
  tc.validate();
  if (data.empty()) throw EmptyDataset("pretrain_backbone: empty dataset");
  for (const auto& s : data) check_sequence_dims(s, cfg);

  BackboneWeights bw = init_backbone(cfg, tc.seed);
  AdamW opt({tc.lr});
  ParamView pv;
  pv.add_table(kBackboneParamPrefix, bw.nt);

  const int samples = tc.batch * tc.accumulation;
  for (int step = 0; step < tc.steps; ++step) {
    Rng sr = detail::step_stream(tc, step);
    GradAccumulator acc;
    double loss_sum = 0.0;
    for (int k = 0; k < samples; ++k) {
      const RenderedSequence& seq = data[sr.next_below(data.size())];
      const double t = detail::draw_time(sr, tc);
      const Ten<float> cond = sequence_tokens(seq, cfg, cfg.chunk_frames);
      const Ten<float> clean = sequence_tokens(seq, cfg, cfg.frames);
      const Ten<float> noise = Ten<float>::normal(clean.shape, sr, 1.0f);

      Tape<float> tp;
      Bound<float> w = bind_tensors(tp, bw.nt, /*trainable=*/true);
      Var<float> loss = dsm_loss(tp, cfg, w, clean, &cond, t, noise);
      tp.backward(loss);
      loss_sum += static_cast<double>(loss.val().data[0]);
      for (const auto& [name, ten] : bw.nt.items)
        acc.accumulate(kBackboneParamPrefix + name, w.at(name).grad(), ten.shape);
      acc.end_sample();
    }
    NamedGrads grads = acc.mean();
    clip_global_norm(grads, tc.clip_norm);
    opt.step(pv, grads);
    if (log && step % tc.log_every == 0) log->add(step, "stage0", "-", loss_sum / samples);
  }
  return bw;
}

// ------------------------------------------- stages I & adaptation: adapter

struct AdapterTrainResult {
  LoRAAdapter adapter;
  std::vector<std::string> optimizer_update_set;  // sorted qualified names
};

namespace detail {

inline AdapterTrainResult train_adapter_impl(const std::string& embodiment,
                                             const std::vector<RenderedSequence>& unpaired,
                                             const BackboneWeights& backbone,
                                             const MotionDelta* motion,
                                             const char* stage_label, const TrainConfig& tc,
                                             LossLog* log) {
  const ModelConfig& cfg = backbone.cfg;
  cfg.validate();
  tc.validate();
  if (unpaired.empty())
    throw EmptyDataset(std::string(stage_label) + ": empty unpaired set");
  for (const auto& s : unpaired) {
    if (s.embodiment_id != embodiment)
      throw MixedEmbodimentData(std::string(stage_label) + ": sequence of embodiment " +
                                s.embodiment_id + " in the " + embodiment + " set");
    check_sequence_dims(s, cfg);
  }

  AdapterTrainResult res;
  res.adapter = init_adapter(cfg, embodiment, tc.seed);
  const std::string prefix = adapter_param_prefix(embodiment);
  AdamW opt({tc.lr});
  ParamView pv;
  pv.add_table(prefix, res.adapter.nt);

  const int samples = tc.batch * tc.accumulation;
  for (int step = 0; step < tc.steps; ++step) {
    Rng sr = step_stream(tc, step);
    GradAccumulator acc;
    double loss_sum = 0.0;
    for (int k = 0; k < samples; ++k) {
      const RenderedSequence& seq = unpaired[sr.next_below(unpaired.size())];
      const double t = draw_time(sr, tc);
      const Ten<float> cond = sequence_tokens(seq, cfg, cfg.chunk_frames);
      const Ten<float> clean = sequence_tokens(seq, cfg, cfg.frames);
      const Ten<float> noise = Ten<float>::normal(clean.shape, sr, 1.0f);

      Tape<float> tp;
      Bound<float> w = bind_tensors(tp, backbone.nt, /*trainable=*/false);
      Bound<float> ad = bind_tensors(tp, res.adapter.nt, /*trainable=*/true);
      Bound<float> mo;
      DitHooks<float> hooks;
      hooks.adapter = {&ad, res.adapter.scale, /*trainable=*/true};
      if (motion) {
        mo = bind_tensors(tp, motion->nt, /*trainable=*/false);
        hooks.motion = {&mo, motion->scale, /*trainable=*/false};
      }
      Var<float> loss = dsm_loss(tp, cfg, w, clean, &cond, t, noise, hooks);
      tp.backward(loss);
      loss_sum += static_cast<double>(loss.val().data[0]);
      for (const auto& [name, ten] : res.adapter.nt.items)
        acc.accumulate(prefix + name, ad.at(name).grad(), ten.shape);
      acc.end_sample();
    }
    NamedGrads grads = acc.mean();
    clip_global_norm(grads, tc.clip_norm);
    opt.step(pv, grads);
    if (log && step % tc.log_every == 0)
      log->add(step, stage_label, embodiment, loss_sum / samples);
  }
  res.optimizer_update_set = opt.update_set();
  return res;
}

}  // namespace detail

// Trains one embodiment's adapter on its unpaired sequences against a frozen
// backbone. Only the adapter factors receive updates; the returned result
// carries the optimizer's exact update set for the freeze audit.
inline AdapterTrainResult stage1_train_lora(const std::string& embodiment,
                                            const std::vector<RenderedSequence>& unpaired,
                                            const BackboneWeights& backbone,
                                            const TrainConfig& tc, LossLog* log = nullptr) {
  return detail::train_adapter_impl(embodiment, unpaired, backbone, nullptr, "stage1", tc,
                                    log);
}

// Adapter training for an embodiment the bank has never seen, against the
// fully frozen post-shared-training model (backbone plus motion delta).
inline AdapterTrainResult adapt_unseen(const std::string& new_embodiment,
                                       const std::vector<RenderedSequence>& unpaired,
                                       const BackboneWeights& backbone,
                                       const MotionDelta& motion, const AdapterBank& bank,
                                       const TrainConfig& tc, LossLog* log = nullptr) {
  if (bank.has(new_embodiment))
    throw EmbodimentAlreadyKnown("adapt_unseen: embodiment already has an adapter: " +
                                 new_embodiment);
  return detail::train_adapter_impl(new_embodiment, unpaired, backbone, &motion, "adapt",
                                    tc, log);
}

// --------------------------------------------- stage II: shared motion set

struct Stage2Result {
  std::vector<std::string> activation_log;        // active embodiment per step
  std::vector<std::string> optimizer_update_set;  // sorted qualified names
};

// Trains the shared motion-transfer set on paired samples (source video as
// conditioning, target video as the denoising target). Every step picks a
// target embodiment uniformly, loads exactly that embodiment's adapter for
// the whole step (rolling loading, single-embodiment batches), and updates
// only the partition's shared_motion tensors: the conditioning-branch
// embedding and the low-rank conditioning-row deltas. Adapters and the
// backbone base stay byte-frozen.
inline Stage2Result stage2_train_shared(const std::vector<PairedSample>& paired,
                                        const AdapterBank& bank, BackboneWeights& backbone,
                                        MotionDelta& motion, const ParameterPartition& part,
                                        const TrainConfig& tc, LossLog* log = nullptr) {
  const ModelConfig& cfg = backbone.cfg;
  cfg.validate();
  tc.validate();
  validate_partition(part, backbone, motion, bank);
  if (paired.empty()) throw EmptyDataset("stage2: empty paired set");

  std::map<std::string, std::vector<std::size_t>> pools;  // target embodiment -> samples
  for (std::size_t i = 0; i < paired.size(); ++i) {
    const PairedSample& ps = paired[i];
    check_sequence_dims(ps.source, cfg);
    check_sequence_dims(ps.target, cfg);
    if (!bank.has(ps.target_embodiment))
      throw MissingAdapter("stage2: no adapter registered for target embodiment " +
                           ps.target_embodiment);
    pools[ps.target_embodiment].push_back(i);
  }
  if (pools.size() < 2)
    throw InsufficientEmbodiments("stage2: needs >= 2 distinct target embodiments");

  std::vector<std::string> embs;  // sorted by construction (map order)
  for (const auto& [id, pool] : pools) embs.push_back(id);

  const std::unordered_set<std::string> shared(part.shared_motion.begin(),
                                               part.shared_motion.end());
  if (shared.empty()) throw ConfigError("stage2: partition has no shared-motion tensors");
  bool motion_trainable = false;
  ParamView pv;
  for (const auto& qname : part.shared_motion) {
    if (qname.rfind(kBackboneParamPrefix, 0) == 0) {
      pv.add(qname, backbone.mutable_t(qname.substr(std::string(kBackboneParamPrefix).size())));
    } else if (qname.rfind(kMotionParamPrefix, 0) == 0) {
      const std::string leaf = qname.substr(std::string(kMotionParamPrefix).size());
      bool found = false;
      for (auto& [n, t] : motion.nt.items)
        if (n == leaf) {
          pv.add(qname, t);
          found = true;
          break;
        }
      if (!found) throw ConfigError("stage2: partition names a missing motion tensor: " + qname);
      motion_trainable = true;
    } else {
      throw ConfigError("stage2: shared-motion set may only name backbone or motion tensors: " +
                        qname);
    }
  }

  auto backbone_trainable = [&](const std::string& leaf) {
    return shared.count(kBackboneParamPrefix + leaf) != 0;
  };

  AdamW opt({tc.lr});
  Stage2Result res;
  const int samples = tc.batch * tc.accumulation;
  for (int step = 0; step < tc.steps; ++step) {
    Rng sr = detail::step_stream(tc, step);
    const std::string& emb = embs[sr.next_below(embs.size())];
    const std::vector<std::size_t>& pool = pools.at(emb);
    const LoRAAdapter& adapter = bank.get(emb);

    GradAccumulator acc;
    double loss_sum = 0.0;
    for (int k = 0; k < samples; ++k) {
      const PairedSample& ps = paired[pool[sr.next_below(pool.size())]];
      const double t = detail::draw_time(sr, tc);
      const Ten<float> cond = sequence_tokens(ps.source, cfg, cfg.frames);
      const Ten<float> clean = sequence_tokens(ps.target, cfg, cfg.frames);
      const Ten<float> noise = Ten<float>::normal(clean.shape, sr, 1.0f);

      Tape<float> tp;
      Bound<float> w = bind_tensors_if(tp, backbone.nt, backbone_trainable);
      Bound<float> ad = bind_tensors(tp, adapter.nt, /*trainable=*/false);
      Bound<float> mo = bind_tensors(tp, motion.nt, motion_trainable);
      DitHooks<float> hooks;
      hooks.adapter = {&ad, adapter.scale, /*trainable=*/false};
      hooks.motion = {&mo, motion.scale, motion_trainable};
      Var<float> loss = dsm_loss(tp, cfg, w, clean, &cond, t, noise, hooks);
      tp.backward(loss);
      loss_sum += static_cast<double>(loss.val().data[0]);
      for (const auto& [qname, ten] : pv.entries) {
        const Bound<float>& table =
            qname.rfind(kBackboneParamPrefix, 0) == 0 ? w : mo;
        const std::string leaf =
            qname.substr(qname.find('.') + 1);
        acc.accumulate(qname, table.at(leaf).grad(), ten->shape);
      }
      acc.end_sample();
    }
    NamedGrads grads = acc.mean();
    clip_global_norm(grads, tc.clip_norm);
    opt.step(pv, grads);
    res.activation_log.push_back(emb);
    if (log && step % tc.log_every == 0) log->add(step, "stage2", emb, loss_sum / samples);
  }
  res.optimizer_update_set = opt.update_set();
  return res;
}

}  // namespace tape
