// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapter algebra and the adapter bank. The reference for the
// factored update is a naive triple-loop product, written independently of
// the library's matrix code.

#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "tape/core/checkpoint.hpp"
#include "tape/core/rng.hpp"
#include "tape/model/lora.hpp"
#include "tape/model/weights.hpp"

namespace {

using tape::Ten;

// Independent reference: out = W + scale * (B @ A), accumulated in double,
// one explicit loop nest, no shared code with the implementation.
Ten<float> oracle_apply(const Ten<float>& w, const Ten<float>& a, const Ten<float>& b,
                        float scale) {
  const int d_in = w.rows(), d_out = w.cols(), r = a.rows();
  Ten<float> out({d_in, d_out});
  for (int i = 0; i < d_in; ++i)
    for (int j = 0; j < d_out; ++j) {
      double acc = 0.0;
      for (int k = 0; k < r; ++k)
        acc += static_cast<double>(b.at({i, k})) * static_cast<double>(a.at({k, j}));
      out.at({i, j}) = w.at({i, j}) + scale * static_cast<float>(acc);
    }
  return out;
}

bool bytes_equal(const Ten<float>& a, const Ten<float>& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

tape::ModelConfig mini_config() {
  tape::ModelConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.depth = 2;
  cfg.frames = 2;
  cfg.height = 2;
  cfg.width = 2;
  cfg.channels = 2;
  cfg.patch = 1;
  cfg.chunk_frames = 1;
  cfg.text_tokens = 2;
  cfg.lora_rank = 2;
  cfg.lora_alpha = 2.0f;
  cfg.motion_rank = 2;
  cfg.motion_alpha = 2.0f;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("zero A factor leaves the projection bit-identical", "[lora]") {
  tape::Rng rng(11);
  Ten<float> w = Ten<float>::normal({8, 8}, rng, 1.0f);
  Ten<float> a = Ten<float>::zeros({2, 8});
  Ten<float> b = Ten<float>::normal({8, 2}, rng, 1.0f);
  Ten<float> out = tape::apply_lora(w, a, b, 1.0f);
  CHECK(bytes_equal(out, w));
}

TEST_CASE("rank-1 unit factors bump exactly one entry", "[lora]") {
  tape::Rng rng(12);
  Ten<float> w = Ten<float>::normal({6, 6}, rng, 1.0f);
  Ten<float> b = Ten<float>::zeros({6, 1});
  b.at({1, 0}) = 1.0f;  // unit column e_1
  Ten<float> a = Ten<float>::zeros({1, 6});
  a.at({0, 2}) = 1.0f;  // unit row e_2^T
  Ten<float> out = tape::apply_lora(w, a, b, 1.0f);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      if (i == 1 && j == 2)
        CHECK(out.at({i, j}) == w.at({i, j}) + 1.0f);
      else
        CHECK(out.at({i, j}) == w.at({i, j}));
    }
}

TEST_CASE("random factors match the triple-loop reference", "[lora]") {
  tape::Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    Ten<float> w = Ten<float>::normal({8, 8}, rng, 1.0f);
    Ten<float> a = Ten<float>::normal({2, 8}, rng, 1.0f);
    Ten<float> b = Ten<float>::normal({8, 2}, rng, 1.0f);
    const float scale = 0.5f + 0.25f * static_cast<float>(trial);
    Ten<float> got = tape::apply_lora(w, a, b, scale);
    Ten<float> want = oracle_apply(w, a, b, scale);
    for (int i = 0; i < 64; ++i) {
      const double g = got.at(i), x = want.at(i);
      CHECK(std::abs(g - x) <= 1e-6 * std::max(1.0, std::abs(x)));
    }
  }
}

TEST_CASE("factor shape violations are rejected", "[lora]") {
  tape::Rng rng(14);
  Ten<float> w = Ten<float>::normal({8, 8}, rng, 1.0f);
  CHECK_THROWS_AS(tape::apply_lora(w, Ten<float>::zeros({2, 7}), Ten<float>::zeros({8, 2}), 1.0f),
                  tape::ShapeMismatch);
  CHECK_THROWS_AS(tape::apply_lora(w, Ten<float>::zeros({2, 8}), Ten<float>::zeros({7, 2}), 1.0f),
                  tape::ShapeMismatch);
  CHECK_THROWS_AS(tape::apply_lora(w, Ten<float>::zeros({2, 8}), Ten<float>::zeros({8, 3}), 1.0f),
                  tape::ShapeMismatch);
}

TEST_CASE("applying adapters never touches the base weights", "[lora]") {
  tape::ModelConfig cfg = mini_config();
  tape::BackboneWeights bw = tape::init_backbone(cfg, 21);
  const std::uint64_t before = bw.content_hash();

  tape::LoRAAdapter ad = tape::init_adapter(cfg, "E1", 22);
  // Make the adapter non-trivial, then apply it everywhere repeatedly.
  for (int i = 0; i < cfg.depth; ++i)
    for (tape::Proj p : {tape::Proj::kQ, tape::Proj::kK, tape::Proj::kV}) {
      tape::Rng rng(100 + i);
      for (auto& [name, ten] : ad.nt.items)
        if (name == tape::lora_b_name(i, p)) ten = Ten<float>::normal(ten.shape, rng, 0.1f);
    }
  for (int rep = 0; rep < 3; ++rep)
    for (int i = 0; i < cfg.depth; ++i)
      for (tape::Proj p : {tape::Proj::kQ, tape::Proj::kK, tape::Proj::kV})
        (void)tape::effective_projection(bw, i, p, &ad);

  CHECK(bw.content_hash() == before);
}

TEST_CASE("fresh adapters are deterministic no-ops with Gaussian A", "[lora]") {
  tape::ModelConfig cfg = mini_config();
  tape::LoRAAdapter ad = tape::init_adapter(cfg, "E0", 5);
  CHECK(ad.rank == cfg.lora_rank);
  CHECK(ad.scale == 1.0f);  // alpha == rank

  bool a_has_value = false;
  for (int i = 0; i < cfg.depth; ++i)
    for (tape::Proj p : {tape::Proj::kQ, tape::Proj::kK, tape::Proj::kV}) {
      for (float v : ad.b(i, p).data) CHECK(v == 0.0f);
      for (float v : ad.a(i, p).data) a_has_value |= (v != 0.0f);
      CHECK(ad.a(i, p).rows() == cfg.lora_rank);
      CHECK(ad.a(i, p).cols() == cfg.d);
    }
  CHECK(a_has_value);

  tape::LoRAAdapter again = tape::init_adapter(cfg, "E0", 5);
  CHECK(tape::serialize_checkpoint(ad.nt) == tape::serialize_checkpoint(again.nt));
  tape::LoRAAdapter other_id = tape::init_adapter(cfg, "E1", 5);
  CHECK(tape::serialize_checkpoint(ad.nt) != tape::serialize_checkpoint(other_id.nt));
  tape::LoRAAdapter other_seed = tape::init_adapter(cfg, "E0", 6);
  CHECK(tape::serialize_checkpoint(ad.nt) != tape::serialize_checkpoint(other_seed.nt));

  CHECK_THROWS_AS(tape::init_adapter(cfg, "", 5), tape::Error);
  CHECK_THROWS_AS(tape::init_adapter(cfg, "bad.id", 5), tape::Error);
}

TEST_CASE("bank registration and activation guard their preconditions", "[lora]") {
  tape::ModelConfig cfg = mini_config();
  tape::AdapterBank bank;
  bank.register_adapter(tape::init_adapter(cfg, "E0", 1));
  bank.register_adapter(tape::init_adapter(cfg, "E1", 2));

  CHECK_THROWS_AS(bank.register_adapter(tape::init_adapter(cfg, "E0", 3)),
                  tape::DuplicateEmbodiment);
  CHECK_THROWS_AS(bank.activate("E9"), tape::UnknownEmbodiment);
  CHECK_THROWS_AS(bank.get("E9"), tape::UnknownEmbodiment);

  CHECK_FALSE(bank.active_id().has_value());
  CHECK(bank.active_adapter() == nullptr);
  bank.activate("E1");
  REQUIRE(bank.active_id().has_value());
  CHECK(*bank.active_id() == "E1");
  CHECK(bank.active_adapter()->embodiment_id == "E1");
  bank.deactivate();
  CHECK(bank.active_adapter() == nullptr);
  CHECK(bank.ids() == std::vector<std::string>{"E0", "E1"});
}

TEST_CASE("activation is stateless selection", "[lora]") {
  tape::ModelConfig cfg = mini_config();
  tape::BackboneWeights bw = tape::init_backbone(cfg, 31);
  tape::AdapterBank bank;
  for (int e = 0; e < 2; ++e) {
    tape::LoRAAdapter ad = tape::init_adapter(cfg, "E" + std::to_string(e), 40 + e);
    tape::Rng rng(50 + e);
    for (auto& [name, ten] : ad.nt.items)
      if (name.ends_with(".B")) ten = Ten<float>::normal(ten.shape, rng, 0.1f);
    bank.register_adapter(std::move(ad));
  }

  auto snapshot = [&] {
    tape::NamedTensors nt;
    for (int i = 0; i < cfg.depth; ++i)
      for (tape::Proj p : {tape::Proj::kQ, tape::Proj::kK, tape::Proj::kV})
        nt.add(tape::attn_w_name(i, p),
               tape::effective_projection(bw, i, p, bank.active_adapter()));
    return tape::serialize_checkpoint(nt);
  };

  bank.activate("E0");
  const std::string first = snapshot();
  bank.activate("E1");
  const std::string other = snapshot();
  bank.activate("E0");
  CHECK(snapshot() == first);
  CHECK(other != first);

  bank.deactivate();
  tape::NamedTensors base;
  for (int i = 0; i < cfg.depth; ++i)
    for (tape::Proj p : {tape::Proj::kQ, tape::Proj::kK, tape::Proj::kV})
      base.add(tape::attn_w_name(i, p), bw.t(tape::attn_w_name(i, p)));
  CHECK(snapshot() == tape::serialize_checkpoint(base));
}

TEST_CASE("bank save and load round-trip byte-exactly", "[lora]") {
  tape::ModelConfig cfg = mini_config();
  tape::AdapterBank bank;
  for (int e = 0; e < 4; ++e) {
    tape::LoRAAdapter ad = tape::init_adapter(cfg, "E" + std::to_string(e), 60 + e);
    tape::Rng rng(70 + e);
    for (auto& [name, ten] : ad.nt.items)
      if (name.ends_with(".B")) ten = Ten<float>::normal(ten.shape, rng, 0.05f);
    ad.scale = 0.5f + 0.25f * static_cast<float>(e);
    bank.register_adapter(std::move(ad));
  }
  bank.activate("E2");

  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "tape_lora_bank_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "bank.omnh").string();
  bank.save(path);
  tape::AdapterBank loaded = tape::AdapterBank::load(path);

  CHECK(loaded.size() == 4);
  CHECK_FALSE(loaded.active_id().has_value());  // selection is session state
  for (const std::string& id : bank.ids()) {
    const tape::LoRAAdapter& a = bank.get(id);
    const tape::LoRAAdapter& b = loaded.get(id);
    CHECK(a.scale == b.scale);
    CHECK(a.rank == b.rank);
    CHECK(tape::serialize_checkpoint(a.nt) == tape::serialize_checkpoint(b.nt));
  }
  // Whole-bank byte stability: saving the loaded bank reproduces the file.
  const std::string path2 = (dir / "bank2.omnh").string();
  loaded.save(path2);
  CHECK(tape::file_content_hash(path) == tape::file_content_hash(path2));
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed bank tensors are rejected", "[lora]") {
  tape::NamedTensors nt;
  nt.add("wrong.E0.blocks.0.q.A", Ten<float>::zeros({2, 8}));
  CHECK_THROWS_AS(tape::AdapterBank::from_named_tensors(nt), tape::IoError);

  tape::NamedTensors nt2;
  nt2.add("adapter.E0.blocks.0.q.A", Ten<float>::zeros({2, 8}));
  CHECK_THROWS_AS(tape::AdapterBank::from_named_tensors(nt2), tape::IoError);

  tape::NamedTensors nt3;
  nt3.add("adapter.", Ten<float>::zeros({1}));
  CHECK_THROWS_AS(tape::AdapterBank::from_named_tensors(nt3), tape::IoError);
}
