// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// The reference implementation below is a deliberately naive triple loop in
// double precision, written independently of the production kernel.  Every
// numeric expectation in this file comes from it (or from closed-form
// reasoning stated inline), never from running the production code.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "tape/core/autodiff.hpp"
#include "tape/core/mask.hpp"
#include "tape/core/rng.hpp"
#include "tape/core/tensor.hpp"

using tape::AttentionMask;
using tape::Rng;
using tape::Tape;
using tape::Ten;
using tape::Var;

namespace {

// Independent oracle: masked scaled-dot-product attention, one head.
// q: n x d, k: m x d, v: m x d.  Excluded positions get zero weight by
// construction (they are simply skipped), so this cannot share a bug with an
// additive-mask implementation.
template <class VecQ, class VecK, class VecV>
std::vector<double> oracle_attention(const VecQ& q, const VecK& k, const VecV& v,
                                     const std::vector<std::uint8_t>& vis,
                                     int n, int m, int d) {
  std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < n; ++i) {
    std::vector<double> logits(m, 0.0);
    double max_logit = -1e300;
    for (int j = 0; j < m; ++j) {
      if (!vis[static_cast<std::size_t>(i) * m + j]) continue;
      double s = 0.0;
      for (int c = 0; c < d; ++c) s += q[static_cast<std::size_t>(i) * d + c] * k[static_cast<std::size_t>(j) * d + c];
      logits[j] = s * inv_sqrt;
      max_logit = std::max(max_logit, logits[j]);
    }
    double denom = 0.0;
    std::vector<double> w(m, 0.0);
    for (int j = 0; j < m; ++j) {
      if (!vis[static_cast<std::size_t>(i) * m + j]) continue;
      w[j] = std::exp(logits[j] - max_logit);
      denom += w[j];
    }
    for (int j = 0; j < m; ++j) {
      if (w[j] == 0.0) continue;
      double wj = w[j] / denom;
      for (int c = 0; c < d; ++c)
        out[static_cast<std::size_t>(i) * d + c] += wj * v[static_cast<std::size_t>(j) * d + c];
    }
  }
  return out;
}

template <class S>
Ten<S> random_ten(Rng& rng, std::vector<int> shape, double lo, double hi) {
  Ten<S> t(std::move(shape));
  for (auto& x : t.data) x = static_cast<S>(lo + (hi - lo) * rng.next_unit());
  return t;
}

}  // namespace

TEST_CASE("single visible key returns its value row exactly", "[attention]") {
  // One query, one key: the sole softmax weight is exp(0)/exp(0) = 1, so the
  // output must equal v bit-for-bit.
  Tape<float> tape;
  Ten<float> q({1, 4}), k({1, 4}), v({1, 4});
  q.data = {0.3f, -1.2f, 0.7f, 2.0f};
  k.data = {1.0f, 0.5f, -0.25f, 0.125f};
  v.data = {4.0f, -3.5f, 0.0625f, 7.0f};
  AttentionMask mask(1, 1);
  mask.set(0, 0, true);
  auto out = tape::masked_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), mask);
  for (int c = 0; c < 4; ++c) REQUIRE(out.val().data[c] == v.data[c]);
}

TEST_CASE("two keys with equal logits average the values", "[attention]") {
  // Identical key rows give identical logits, so both weights are exactly 0.5
  // (exp(0)/2) and the output is the midpoint of the two value rows.
  Tape<float> tape;
  Ten<float> q({1, 2}), k({2, 2}), v({2, 2});
  q.data = {0.9f, -0.4f};
  k.data = {0.6f, 1.1f, 0.6f, 1.1f};
  v.data = {2.0f, -6.0f, 4.0f, 10.0f};
  AttentionMask mask(1, 2);
  mask.set(0, 0, true);
  mask.set(0, 1, true);
  auto out = tape::masked_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), mask);
  REQUIRE(out.val().data[0] == Catch::Approx(3.0).margin(1e-6));
  REQUIRE(out.val().data[1] == Catch::Approx(2.0).margin(1e-6));
}

TEST_CASE("random case matches the naive oracle", "[attention]") {
  const int n = 4, m = 4, d = 4;
  Rng rng(1234);
  auto q = random_ten<double>(rng, {n, d}, -2.0, 2.0);
  auto k = random_ten<double>(rng, {m, d}, -2.0, 2.0);
  auto v = random_ten<double>(rng, {m, d}, -3.0, 3.0);
  AttentionMask mask(n, m);
  // Random mask with every row kept valid: position (i,i) always visible.
  for (int i = 0; i < n; ++i) {
    mask.set(i, i, true);
    for (int j = 0; j < m; ++j)
      if (rng.next_unit() < 0.5) mask.set(i, j, true);
  }
  std::vector<std::uint8_t> vis(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) vis[static_cast<std::size_t>(i) * m + j] = mask.vis(i, j) ? 1 : 0;

  auto expect = oracle_attention(q.data, k.data, v.data, vis, n, m, d);

  Tape<double> tape;
  auto out = tape::masked_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), mask);
  for (int i = 0; i < n * d; ++i)
    REQUIRE(out.val().data[i] == Catch::Approx(expect[i]).margin(1e-6));
}

TEST_CASE("multi-head matches per-head oracle on split slices", "[attention]") {
  // heads=2 must behave exactly like running the oracle on each contiguous
  // d/heads slice of q,k,v independently and concatenating the outputs.
  const int n = 3, m = 5, d = 8, heads = 2, hd = d / heads;
  Rng rng(77);
  auto q = random_ten<double>(rng, {n, d}, -1.5, 1.5);
  auto k = random_ten<double>(rng, {m, d}, -1.5, 1.5);
  auto v = random_ten<double>(rng, {m, d}, -2.0, 2.0);
  AttentionMask mask(n, m);
  for (int i = 0; i < n; ++i) {
    mask.set(i, 0, true);
    for (int j = 1; j < m; ++j)
      if (rng.next_unit() < 0.6) mask.set(i, j, true);
  }
  std::vector<std::uint8_t> vis(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) vis[static_cast<std::size_t>(i) * m + j] = mask.vis(i, j) ? 1 : 0;

  std::vector<double> expect(static_cast<std::size_t>(n) * d);
  for (int h = 0; h < heads; ++h) {
    std::vector<double> qh(static_cast<std::size_t>(n) * hd), kh(static_cast<std::size_t>(m) * hd), vh(static_cast<std::size_t>(m) * hd);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < hd; ++c) qh[static_cast<std::size_t>(i) * hd + c] = q.data[static_cast<std::size_t>(i) * d + h * hd + c];
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < hd; ++c) {
        kh[static_cast<std::size_t>(j) * hd + c] = k.data[static_cast<std::size_t>(j) * d + h * hd + c];
        vh[static_cast<std::size_t>(j) * hd + c] = v.data[static_cast<std::size_t>(j) * d + h * hd + c];
      }
    auto oh = oracle_attention(qh, kh, vh, vis, n, m, hd);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < hd; ++c) expect[static_cast<std::size_t>(i) * d + h * hd + c] = oh[static_cast<std::size_t>(i) * hd + c];
  }

  Tape<double> tape;
  auto out = tape::masked_attention_mh(tape.leaf(q), tape.leaf(k), tape.leaf(v), mask, heads);
  for (int i = 0; i < n * d; ++i)
    REQUIRE(out.val().data[i] == Catch::Approx(expect[i]).margin(1e-9));
}

TEST_CASE("excluded key and value rows cannot leak into the output", "[attention]") {
  // Mutating K or V at a masked (i,j) position must leave output row i
  // bit-identical.  This is the exclusion (not just attenuation) guarantee the
  // rest of the system leans on.
  const int n = 3, m = 4, d = 8;
  Rng rng(555);
  auto q = random_ten<float>(rng, {n, d}, -2.0, 2.0);
  auto k = random_ten<float>(rng, {m, d}, -2.0, 2.0);
  auto v = random_ten<float>(rng, {m, d}, -2.0, 2.0);
  AttentionMask mask(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) mask.set(i, j, true);
  const int qi = 1, kj = 2;
  mask.set(qi, kj, false);

  auto run = [&](const Ten<float>& kk, const Ten<float>& vv) {
    Tape<float> tape;
    auto out = tape::masked_attention_mh(tape.leaf(q), tape.leaf(kk), tape.leaf(vv), mask, 2);
    return out.val();
  };
  auto base = run(k, v);

  auto k2 = k;
  for (int c = 0; c < d; ++c) k2.data[static_cast<std::size_t>(kj) * d + c] = 1e6f * (c + 1);
  auto with_k = run(k2, v);
  REQUIRE(std::memcmp(&base.data[static_cast<std::size_t>(qi) * d], &with_k.data[static_cast<std::size_t>(qi) * d], sizeof(float) * d) == 0);

  auto v2 = v;
  for (int c = 0; c < d; ++c) v2.data[static_cast<std::size_t>(kj) * d + c] = -4e7f * (c + 3);
  auto with_v = run(k, v2);
  REQUIRE(std::memcmp(&base.data[static_cast<std::size_t>(qi) * d], &with_v.data[static_cast<std::size_t>(qi) * d], sizeof(float) * d) == 0);

  // Unmasked rows that CAN see column kj must change when K there changes:
  // guards against a kernel that ignores K entirely.
  bool other_changed = false;
  for (int c = 0; c < d; ++c)
    if (base.data[c] != with_k.data[c]) other_changed = true;
  REQUIRE(other_changed);
}

TEST_CASE("attention weights are a distribution over visible positions", "[attention]") {
  const int n = 5, m = 6, d = 4;
  Rng rng(31);
  auto q = random_ten<float>(rng, {n, d}, -1.0, 1.0);
  auto k = random_ten<float>(rng, {m, d}, -1.0, 1.0);
  AttentionMask mask(n, m);
  for (int i = 0; i < n; ++i) {
    mask.set(i, (i * 2) % m, true);
    for (int j = 0; j < m; ++j)
      if (rng.next_unit() < 0.4) mask.set(i, j, true);
  }
  auto w = tape::attention_weights(q, k, mask);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < m; ++j) {
      float wij = w.at({i, j});
      REQUIRE(wij >= 0.0f);
      if (!mask.vis(i, j)) REQUIRE(wij == 0.0f);
      row += wij;
    }
    REQUIRE(row == Catch::Approx(1.0).margin(1e-5));
  }
}

TEST_CASE("fully visible mask equals dense attention", "[attention]") {
  const int n = 4, m = 4, d = 8;
  Rng rng(99);
  auto q = random_ten<double>(rng, {n, d}, -1.0, 1.0);
  auto k = random_ten<double>(rng, {m, d}, -1.0, 1.0);
  auto v = random_ten<double>(rng, {m, d}, -1.0, 1.0);
  std::vector<std::uint8_t> vis(static_cast<std::size_t>(n) * m, 1);
  auto expect = oracle_attention(q.data, k.data, v.data, vis, n, m, d);
  AttentionMask mask(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) mask.set(i, j, true);
  Tape<double> tape;
  auto out = tape::masked_attention_mh(tape.leaf(q), tape.leaf(k), tape.leaf(v), mask, 2);
  // heads=2 on slices vs oracle on full d differ, so use heads=1 here.
  auto out1 = tape::masked_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), mask);
  for (int i = 0; i < n * d; ++i)
    REQUIRE(out1.val().data[i] == Catch::Approx(expect[i]).margin(1e-9));
  (void)out;
}

TEST_CASE("a row with nothing visible is rejected", "[attention]") {
  Tape<float> tape;
  Ten<float> q = Ten<float>::zeros({2, 4});
  Ten<float> k = Ten<float>::zeros({2, 4});
  Ten<float> v = Ten<float>::zeros({2, 4});
  AttentionMask mask(2, 2);
  mask.set(0, 0, true);  // row 1 left empty
  REQUIRE_THROWS_AS(tape::masked_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), mask),
                    tape::FullyMaskedRow);
}

TEST_CASE("mismatched shapes are rejected", "[attention]") {
  Tape<float> tape;
  Ten<float> q = Ten<float>::zeros({2, 4});
  Ten<float> k = Ten<float>::zeros({3, 4});
  Ten<float> v = Ten<float>::zeros({2, 4});  // rows disagree with k
  AttentionMask mask(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) mask.set(i, j, true);
  REQUIRE_THROWS_AS(tape::masked_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), mask),
                    tape::ShapeMismatch);

  Ten<float> v2 = Ten<float>::zeros({3, 4});
  AttentionMask wrong(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) wrong.set(i, j, true);
  REQUIRE_THROWS_AS(tape::masked_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v2), wrong),
                    tape::ShapeMismatch);

  // head count must divide the feature dimension
  AttentionMask ok(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) ok.set(i, j, true);
  REQUIRE_THROWS_AS(tape::masked_attention_mh(tape.leaf(q), tape.leaf(Ten<float>::zeros({3, 4})),
                                              tape.leaf(v2), ok, 3),
                    tape::ShapeMismatch);
}
