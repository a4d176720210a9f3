// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "tape/core/checkpoint.hpp"
#include "tape/core/hash.hpp"
#include "tape/core/rng.hpp"
#include "tape/core/tensor.hpp"

using tape::NamedTensors;
using tape::Rng;
using tape::Ten;

namespace {

NamedTensors sample_bundle() {
  Rng rng(2026);
  NamedTensors nt;
  nt.add("alpha.w", Ten<float>::normal({3, 4}, rng, 1.0));
  nt.add("alpha.b", Ten<float>::zeros({1, 4}));
  nt.add("beta", Ten<float>::uniform({2, 2, 2}, rng, -1.0, 1.0));
  return nt;
}

}  // namespace

TEST_CASE("serialize then deserialize reproduces names, shapes and bytes", "[checkpoint]") {
  auto nt = sample_bundle();
  auto bytes = tape::serialize_checkpoint(nt);
  auto back = tape::deserialize_checkpoint(bytes);
  REQUIRE(back.items.size() == nt.items.size());
  for (std::size_t i = 0; i < nt.items.size(); ++i) {
    REQUIRE(back.items[i].first == nt.items[i].first);
    REQUIRE(back.items[i].second.shape == nt.items[i].second.shape);
    REQUIRE(back.items[i].second.data == nt.items[i].second.data);
  }
}

TEST_CASE("serialization is byte-stable for identical content", "[checkpoint]") {
  auto a = tape::serialize_checkpoint(sample_bundle());
  auto b = tape::serialize_checkpoint(sample_bundle());
  REQUIRE(a == b);
  REQUIRE(tape::content_hash(a) == tape::content_hash(b));
}

TEST_CASE("content hash moves when any payload byte moves", "[checkpoint]") {
  auto nt = sample_bundle();
  auto h0 = tape::checkpoint_content_hash(nt);
  nt.items[0].second.data[5] += 1e-3f;
  REQUIRE(tape::checkpoint_content_hash(nt) != h0);
}

TEST_CASE("round trip through a file preserves everything", "[checkpoint]") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "tape_ckpt_test";
  fs::create_directories(dir);
  auto path = (dir / "model.omnh").string();

  auto nt = sample_bundle();
  tape::save_checkpoint(path, nt);
  auto back = tape::load_checkpoint(path);
  REQUIRE(back.items.size() == nt.items.size());
  for (std::size_t i = 0; i < nt.items.size(); ++i) {
    REQUIRE(back.items[i].first == nt.items[i].first);
    REQUIRE(back.items[i].second.data == nt.items[i].second.data);
  }
  REQUIRE(tape::file_content_hash(path) == tape::content_hash(tape::serialize_checkpoint(nt)));
  fs::remove_all(dir);
}

TEST_CASE("corrupted magic and truncated payloads are rejected", "[checkpoint]") {
  auto bytes = tape::serialize_checkpoint(sample_bundle());
  auto bad = bytes;
  bad[0] = 'X';
  REQUIRE_THROWS_AS(tape::deserialize_checkpoint(bad), tape::IoError);
  auto cut = bytes;
  cut.resize(cut.size() - 7);
  REQUIRE_THROWS_AS(tape::deserialize_checkpoint(cut), tape::IoError);
}

TEST_CASE("duplicate tensor names are rejected", "[checkpoint]") {
  NamedTensors nt;
  nt.add("w", Ten<float>::zeros({1}));
  REQUIRE_THROWS_AS(nt.add("w", Ten<float>::zeros({1})), tape::Error);
}

TEST_CASE("loading a missing file raises an io error", "[checkpoint]") {
  REQUIRE_THROWS_AS(tape::load_checkpoint("/nonexistent/dir/x.omnh"), tape::IoError);
}

TEST_CASE("fnv hash matches its published reference values", "[checkpoint]") {
  // Reference values for 64-bit FNV-1a: empty input gives the offset basis;
  // "a" gives 0xaf63dc4c8601ec8c.
  REQUIRE(tape::fnv1a64("") == 0xcbf29ce484222325ull);
  REQUIRE(tape::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  REQUIRE(tape::hex64(0xcbf29ce484222325ull) == "cbf29ce484222325");
}
