// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset assembly and persistence.  A "world" (skeleton + embodiments +
// motions + scenes + canvas dims) is a pure function of a seed; every rendered
// sequence is a pure function of (world, embodiment, motion, scene), so the
// whole dataset regenerates bit-exactly from its seed.
//
// On disk a dataset is a directory of three files:
//   manifest.txt  one sequence per line:
//                 seq_id \t embodiment \t motion \t scene \t byte_offset \t byte_length
//   frames.bin    concatenated little-endian float32, T*H*W*C row-major each
//   splits.txt    partition records (seed, dims, holdout ids, paired/unpaired
//                 memberships), one tab-separated record per line
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/core/rng.hpp"
#include "tape/synth/embodiment.hpp"
#include "tape/synth/kinematics.hpp"
#include "tape/synth/motion.hpp"
#include "tape/synth/raster.hpp"
#include "tape/synth/scene.hpp"
#include "tape/synth/skeleton.hpp"

namespace tape::synth {

// ------------------------------------------------------------------- world

struct WorldParams {
  int T = 16, H = 32, W = 32, C = 3;
  int motion_count = 20;
  std::uint64_t seed = 0;
};

struct World {
  Skeleton skeleton;
  std::vector<EmbodimentSpec> embodiments;
  std::vector<MotionClip> motions;
  std::vector<SceneSpec> scenes;
  int T = 16, H = 32, W = 32, C = 3;
  std::uint64_t seed = 0;

  const EmbodimentSpec& embodiment(const std::string& id) const {
    for (const auto& e : embodiments)
      if (e.id == id) return e;
    throw UnknownEmbodiment("world: no embodiment " + id);
  }
  const MotionClip& motion(const std::string& id) const {
    for (const auto& m : motions)
      if (m.id == id) return m;
    throw Error("world: no motion " + id);
  }
  const SceneSpec& scene(const std::string& id) const {
    for (const auto& s : scenes)
      if (s.id == id) return s;
    throw Error("world: no scene " + id);
  }
};

inline World make_world(const WorldParams& p) {
  World w;
  w.skeleton = default_skeleton();
  w.embodiments = default_embodiments();
  w.motions = default_motions(p.seed, p.motion_count, p.T, w.skeleton.joint_count);
  w.scenes = default_scenes();
  w.T = p.T;
  w.H = p.H;
  w.W = p.W;
  w.C = p.C;
  w.seed = p.seed;
  std::set<std::string> ids;
  for (const auto& e : w.embodiments) {
    e.validate(w.skeleton);
    if (!ids.insert(e.id).second) throw DuplicateEmbodiment("world: duplicate id " + e.id);
  }
  return w;
}

inline std::string seq_id(const std::string& emb, const std::string& motion,
                          const std::string& scene) {
  return emb + "-" + motion + "-" + scene;
}

// Renders the sequence named by a provenance triple.  This is the determinism
// anchor: same world + same triple => bit-identical frames.
inline RenderedSequence render_triple(const World& w, const std::string& emb,
                                      const std::string& motion, const std::string& scene) {
  const auto& e = w.embodiment(emb);
  const auto& m = w.motion(motion);
  const auto& s = w.scene(scene);
  JointPositions pos = retarget(m, w.skeleton, e);
  RenderedSequence seq = render(pos, w.skeleton, e, s, w.H, w.W);
  seq.motion_id = m.id;
  return seq;
}

// ------------------------------------------------------------- descriptors

struct TripleRef {
  std::string emb, motion, scene;
  std::string id() const { return seq_id(emb, motion, scene); }
  bool operator<(const TripleRef& o) const {
    return std::tie(emb, motion, scene) < std::tie(o.emb, o.motion, o.scene);
  }
  bool operator==(const TripleRef& o) const {
    return emb == o.emb && motion == o.motion && scene == o.scene;
  }
};

struct PairDesc {
  TripleRef source, target;
};

struct PairedSample {
  RenderedSequence source, target;
  std::string target_embodiment;
};

// Uniformly samples `budget` distinct (ordered embodiment pair, motion, scene)
// triples without replacement, then deterministically repairs target coverage
// so every embodiment in `embs` appears as a target at least once (requires
// budget >= |embs|, which holds for every configuration we ship).
inline std::vector<PairDesc> sample_pair_descs(const std::vector<std::string>& embs,
                                               const std::vector<std::string>& motions,
                                               const std::vector<std::string>& scenes,
                                               int budget, std::uint64_t seed,
                                               bool cover_targets = true) {
  if (embs.size() < 2)
    throw InsufficientEmbodiments("paired sampling needs at least 2 embodiments");
  std::vector<PairDesc> all;
  for (const auto& a : embs)
    for (const auto& b : embs) {
      if (a == b) continue;
      for (const auto& m : motions)
        for (const auto& s : scenes) all.push_back({{a, m, s}, {b, m, s}});
    }
  if (budget < 1 || static_cast<std::size_t>(budget) > all.size())
    throw ConfigError("paired sampling: budget must be in [1, " +
                      std::to_string(all.size()) + "]");

  Rng rng = Rng(seed).fork(0x50414952);  // pair-sampling stream
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < static_cast<std::size_t>(budget); ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.next_below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }

  // Coverage repair: swap out over-represented targets for missing ones.
  std::map<std::string, int> count;
  for (const auto& e : embs) count[e] = 0;
  for (int i = 0; i < budget; ++i) count[all[idx[static_cast<std::size_t>(i)]].target.emb]++;
  for (const auto& e : embs) {
    if (!cover_targets) break;
    if (count[e] > 0) continue;
    if (budget < static_cast<int>(embs.size()))
      throw ConfigError("paired sampling: budget too small to cover all targets");
    // donor: last selected slot whose target appears more than once
    int donor = -1;
    for (int i = budget - 1; i >= 0 && donor < 0; --i)
      if (count[all[idx[static_cast<std::size_t>(i)]].target.emb] > 1) donor = i;
    // replacement: first unselected triple with the missing target
    std::size_t repl = 0;
    bool found = false;
    for (std::size_t i = static_cast<std::size_t>(budget); i < idx.size() && !found; ++i)
      if (all[idx[i]].target.emb == e) {
        repl = i;
        found = true;
      }
    if (donor < 0 || !found)
      throw ConfigError("paired sampling: cannot repair target coverage");
    count[all[idx[static_cast<std::size_t>(donor)]].target.emb]--;
    count[e]++;
    std::swap(idx[static_cast<std::size_t>(donor)], idx[repl]);
  }

  std::vector<PairDesc> out;
  out.reserve(static_cast<std::size_t>(budget));
  for (int i = 0; i < budget; ++i) out.push_back(all[idx[static_cast<std::size_t>(i)]]);
  return out;
}

// Draws (motion, scene) with replacement for one embodiment.
inline std::vector<TripleRef> sample_unpaired_descs(const std::string& emb,
                                                    const std::vector<std::string>& motions,
                                                    const std::vector<std::string>& scenes,
                                                    int count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("unpaired sampling: count must be >= 1");
  if (motions.empty() || scenes.empty())
    throw ConfigError("unpaired sampling: empty motion or scene pool");
  Rng rng = Rng(seed).fork(0x554E5052);  // unpaired-sampling stream
  std::vector<TripleRef> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const auto& m = motions[static_cast<std::size_t>(rng.next_below(motions.size()))];
    const auto& s = scenes[static_cast<std::size_t>(rng.next_below(scenes.size()))];
    out.push_back({emb, m, s});
  }
  return out;
}

// -------------------------------------------------------- spec-level builders

inline std::vector<PairedSample> build_paired_dataset(const World& w,
                                                      const std::vector<std::string>& embs,
                                                      const std::vector<std::string>& motions,
                                                      const std::vector<std::string>& scenes,
                                                      int budget, std::uint64_t seed) {
  auto descs = sample_pair_descs(embs, motions, scenes, budget, seed);
  std::map<TripleRef, RenderedSequence> cache;
  auto get = [&](const TripleRef& t) -> const RenderedSequence& {
    auto it = cache.find(t);
    if (it == cache.end())
      it = cache.emplace(t, render_triple(w, t.emb, t.motion, t.scene)).first;
    return it->second;
  };
  std::vector<PairedSample> out;
  out.reserve(descs.size());
  for (const auto& d : descs)
    out.push_back({get(d.source), get(d.target), d.target.emb});
  return out;
}

inline std::vector<RenderedSequence> build_unpaired_set(const World& w, const std::string& emb,
                                                        const std::vector<std::string>& motions,
                                                        const std::vector<std::string>& scenes,
                                                        int count, std::uint64_t seed) {
  auto descs = sample_unpaired_descs(emb, motions, scenes, count, seed);
  std::vector<RenderedSequence> out;
  out.reserve(descs.size());
  for (const auto& d : descs) out.push_back(render_triple(w, d.emb, d.motion, d.scene));
  return out;
}

// ------------------------------------------------------------------- splits

struct SplitRecord {
  std::string holdout_embodiment;
  std::vector<std::string> train_embodiments;
  std::vector<std::string> train_motions, test_motions;
  std::vector<std::string> train_scenes, test_scenes;
};

inline SplitRecord split_holdout(const World& w, const std::string& holdout_emb,
                                 double motion_fraction, double scene_fraction,
                                 std::uint64_t seed) {
  if (!(motion_fraction > 0 && motion_fraction < 1) ||
      !(scene_fraction > 0 && scene_fraction < 1))
    throw ConfigError("split: holdout fractions must lie in (0,1)");
  (void)w.embodiment(holdout_emb);  // throws UnknownEmbodiment

  SplitRecord r;
  r.holdout_embodiment = holdout_emb;
  for (const auto& e : w.embodiments)
    if (e.id != holdout_emb) r.train_embodiments.push_back(e.id);

  auto split_ids = [&](const std::vector<std::string>& ids, double frac, std::uint64_t tag,
                       std::vector<std::string>& train, std::vector<std::string>& test) {
    std::vector<std::string> pool = ids;
    Rng rng = Rng(seed).fork(tag);
    for (std::size_t i = 0; i + 1 < pool.size(); ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.next_below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    auto k = static_cast<std::size_t>(std::llround(frac * static_cast<double>(pool.size())));
    if (k == 0 || k >= pool.size()) throw ConfigError("split: fraction leaves a side empty");
    test.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    train.assign(pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end());
  };
  std::vector<std::string> motion_ids, scene_ids;
  for (const auto& m : w.motions) motion_ids.push_back(m.id);
  for (const auto& s : w.scenes) scene_ids.push_back(s.id);
  split_ids(motion_ids, motion_fraction, 0x4D4F544Eu, r.train_motions, r.test_motions);
  split_ids(scene_ids, scene_fraction, 0x53434E45u, r.train_scenes, r.test_scenes);
  return r;
}

// --------------------------------------------------------------- full build

struct DatasetParams {
  WorldParams world;
  std::string holdout_embodiment = "E4";
  double holdout_motion_fraction = 0.2;
  double holdout_scene_fraction = 0.2;
  int pair_budget = 192;
  int unpaired_per_embodiment = 30;
  int adapt_count = 30;  // unpaired clips of the held-out embodiment
  int test_pair_budget = 24;
};

struct BuiltDataset {
  World world;
  DatasetParams params;
  SplitRecord split;
  std::vector<PairDesc> train_pairs;
  std::map<std::string, std::vector<TripleRef>> stage1;  // embodiment -> clips
  std::vector<TripleRef> adapt;
  std::vector<PairDesc> test_pairs;  // half target the held-out embodiment
  std::map<std::string, TripleRef> sequences;  // seq_id -> provenance (dedup)

  void note(const TripleRef& t) { sequences.emplace(t.id(), t); }
};

inline BuiltDataset build_dataset(const DatasetParams& p) {
  BuiltDataset d;
  d.world = make_world(p.world);
  d.params = p;
  d.split = split_holdout(d.world, p.holdout_embodiment, p.holdout_motion_fraction,
                          p.holdout_scene_fraction, p.world.seed);

  d.train_pairs = sample_pair_descs(d.split.train_embodiments, d.split.train_motions,
                                    d.split.train_scenes, p.pair_budget, p.world.seed);
  for (const auto& pr : d.train_pairs) {
    d.note(pr.source);
    d.note(pr.target);
  }
  for (std::size_t i = 0; i < d.split.train_embodiments.size(); ++i) {
    const auto& e = d.split.train_embodiments[i];
    auto set = sample_unpaired_descs(e, d.split.train_motions, d.split.train_scenes,
                                     p.unpaired_per_embodiment, d.world.seed + 101 + i);
    for (const auto& t : set) d.note(t);
    d.stage1[e] = std::move(set);
  }
  d.adapt = sample_unpaired_descs(p.holdout_embodiment, d.split.train_motions,
                                  d.split.train_scenes, p.adapt_count, d.world.seed + 977);
  for (const auto& t : d.adapt) d.note(t);

  // Test pairs live entirely on held-out motions and scenes so train/test
  // triples are disjoint by construction.  Half target the held-out
  // embodiment (sources drawn from training embodiments), half target
  // training embodiments.
  const int holdout_budget = p.test_pair_budget / 2;
  const int train_budget = p.test_pair_budget - holdout_budget;
  {
    Rng rng = Rng(d.world.seed).fork(0x54455354);  // test-pair stream
    std::vector<PairDesc> all;
    for (const auto& src : d.split.train_embodiments)
      for (const auto& m : d.split.test_motions)
        for (const auto& s : d.split.test_scenes)
          all.push_back({{src, m, s}, {p.holdout_embodiment, m, s}});
    if (static_cast<std::size_t>(holdout_budget) > all.size())
      throw ConfigError("dataset: test budget exceeds held-out pair pool");
    for (int i = 0; i < holdout_budget; ++i) {
      std::size_t j = static_cast<std::size_t>(i) +
                      static_cast<std::size_t>(rng.next_below(all.size() - i));
      std::swap(all[static_cast<std::size_t>(i)], all[j]);
      d.test_pairs.push_back(all[static_cast<std::size_t>(i)]);
    }
  }
  {
    auto more = sample_pair_descs(d.split.train_embodiments, d.split.test_motions,
                                  d.split.test_scenes, train_budget, d.world.seed + 443,
                                  /*cover_targets=*/false);
    d.test_pairs.insert(d.test_pairs.end(), more.begin(), more.end());
  }
  for (const auto& pr : d.test_pairs) {
    d.note(pr.source);
    d.note(pr.target);
  }
  return d;
}

// -------------------------------------------------------------- persistence

inline void save_dataset(const std::string& dir, const BuiltDataset& d) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream frames(fs::path(dir) / "frames.bin", std::ios::binary);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!frames || !manifest) throw IoError("save_dataset: cannot open output files");

  std::uint64_t offset = 0;
  for (const auto& [id, triple] : d.sequences) {
    RenderedSequence seq = render_triple(d.world, triple.emb, triple.motion, triple.scene);
    const std::uint64_t len = seq.frames.size() * sizeof(float);
    frames.write(reinterpret_cast<const char*>(seq.frames.data()),
                 static_cast<std::streamsize>(len));
    manifest << id << '\t' << triple.emb << '\t' << triple.motion << '\t' << triple.scene
             << '\t' << offset << '\t' << len << '\n';
    offset += len;
  }
  if (!frames || !manifest) throw IoError("save_dataset: write failure");

  std::ofstream splits(fs::path(dir) / "splits.txt");
  splits << "seed\t" << d.world.seed << '\n';
  splits << "dims\t" << d.world.T << '\t' << d.world.H << '\t' << d.world.W << '\t'
         << d.world.C << '\n';
  splits << "holdout_embodiment\t" << d.split.holdout_embodiment << '\n';
  for (const auto& m : d.split.test_motions) splits << "holdout_motion\t" << m << '\n';
  for (const auto& s : d.split.test_scenes) splits << "holdout_scene\t" << s << '\n';
  for (const auto& e : d.split.train_embodiments) splits << "train_embodiment\t" << e << '\n';
  for (const auto& pr : d.train_pairs)
    splits << "train_paired\t" << pr.source.id() << '\t' << pr.target.id() << '\n';
  for (const auto& [emb, set] : d.stage1)
    for (const auto& t : set) splits << "stage1\t" << emb << '\t' << t.id() << '\n';
  for (const auto& t : d.adapt) splits << "adapt\t" << t.id() << '\n';
  for (const auto& pr : d.test_pairs)
    splits << "test_paired\t" << pr.source.id() << '\t' << pr.target.id() << '\n';
  if (!splits) throw IoError("save_dataset: write failure (splits)");
}

// Read-side view of a dataset directory.
class DatasetReader {
 public:
  struct Record {
    std::string emb, motion, scene;
    std::uint64_t offset = 0, length = 0;
  };

  explicit DatasetReader(const std::string& dir) : dir_(dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw IoError("dataset: missing manifest.txt in " + dir);
    std::string line;
    while (std::getline(manifest, line)) {
      if (line.empty()) continue;
      auto f = fields(line);
      if (f.size() != 6) throw IoError("dataset: malformed manifest line: " + line);
      Record r{f[1], f[2], f[3], std::stoull(f[4]), std::stoull(f[5])};
      records_[f[0]] = r;
      order_.push_back(f[0]);
    }
    std::ifstream splits(fs::path(dir) / "splits.txt");
    if (!splits) throw IoError("dataset: missing splits.txt in " + dir);
    while (std::getline(splits, line)) {
      if (line.empty()) continue;
      auto f = fields(line);
      if (f[0] == "seed") seed_ = std::stoull(f.at(1));
      else if (f[0] == "dims") {
        T_ = std::stoi(f.at(1));
        H_ = std::stoi(f.at(2));
        W_ = std::stoi(f.at(3));
        C_ = std::stoi(f.at(4));
      } else if (f[0] == "holdout_embodiment") holdout_embodiment_ = f.at(1);
      else if (f[0] == "holdout_motion") holdout_motions_.push_back(f.at(1));
      else if (f[0] == "holdout_scene") holdout_scenes_.push_back(f.at(1));
      else if (f[0] == "train_embodiment") train_embodiments_.push_back(f.at(1));
      else if (f[0] == "train_paired") train_pairs_.emplace_back(f.at(1), f.at(2));
      else if (f[0] == "stage1") stage1_[f.at(1)].push_back(f.at(2));
      else if (f[0] == "adapt") adapt_.push_back(f.at(1));
      else if (f[0] == "test_paired") test_pairs_.emplace_back(f.at(1), f.at(2));
      else throw IoError("dataset: unknown splits record: " + f[0]);
    }
    if (T_ == 0) throw IoError("dataset: splits.txt missing dims record");
  }

  RenderedSequence load(const std::string& id) const {
    namespace fs = std::filesystem;
    auto it = records_.find(id);
    if (it == records_.end()) throw IoError("dataset: unknown sequence " + id);
    const Record& r = it->second;
    const std::size_t want = static_cast<std::size_t>(T_) * H_ * W_ * C_ * sizeof(float);
    if (r.length != want) throw IoError("dataset: byte length mismatch for " + id);
    std::ifstream bin(fs::path(dir_) / "frames.bin", std::ios::binary);
    if (!bin) throw IoError("dataset: missing frames.bin");
    bin.seekg(static_cast<std::streamoff>(r.offset));
    RenderedSequence seq;
    seq.T = T_;
    seq.H = H_;
    seq.W = W_;
    seq.C = C_;
    seq.frames.resize(want / sizeof(float));
    bin.read(reinterpret_cast<char*>(seq.frames.data()), static_cast<std::streamsize>(want));
    if (bin.gcount() != static_cast<std::streamsize>(want))
      throw IoError("dataset: truncated frames.bin reading " + id);
    seq.embodiment_id = r.emb;
    seq.motion_id = r.motion;
    seq.scene_id = r.scene;
    return seq;
  }

  const std::map<std::string, Record>& records() const { return records_; }
  const std::vector<std::string>& order() const { return order_; }
  std::uint64_t seed() const { return seed_; }
  int T() const { return T_; }
  int H() const { return H_; }
  int W() const { return W_; }
  int C() const { return C_; }
  const std::string& holdout_embodiment() const { return holdout_embodiment_; }
  const std::vector<std::string>& holdout_motions() const { return holdout_motions_; }
  const std::vector<std::string>& holdout_scenes() const { return holdout_scenes_; }
  const std::vector<std::string>& train_embodiments() const { return train_embodiments_; }
  const std::vector<std::pair<std::string, std::string>>& train_pairs() const {
    return train_pairs_;
  }
  const std::map<std::string, std::vector<std::string>>& stage1() const { return stage1_; }
  const std::vector<std::string>& adapt() const { return adapt_; }
  const std::vector<std::pair<std::string, std::string>>& test_pairs() const {
    return test_pairs_;
  }

 private:
  static std::vector<std::string> fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, '\t')) out.push_back(cur);
    return out;
  }

  std::string dir_;
  std::map<std::string, Record> records_;
  std::vector<std::string> order_;
  std::uint64_t seed_ = 0;
  int T_ = 0, H_ = 0, W_ = 0, C_ = 0;
  std::string holdout_embodiment_;
  std::vector<std::string> holdout_motions_, holdout_scenes_, train_embodiments_;
  std::vector<std::pair<std::string, std::string>> train_pairs_, test_pairs_;
  std::map<std::string, std::vector<std::string>> stage1_;
  std::vector<std::string> adapt_;
};

}  // namespace tape::synth
