// Copyright 2026 The glyphflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "glyphflow/common/error.hpp"
#include "glyphflow/common/rng.hpp"
#include "glyphflow/sequence/sequence.hpp"

using namespace gf::sequence;

namespace {

std::vector<double> normal_vec(gf::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Embeddings {
  std::vector<double> table, w_in, modality;
  EmbeddingView<double> view(int vocab, int in_dim, int d) const {
    return {table.data(), vocab, w_in.data(), in_dim, modality.data(), d};
  }
};

Embeddings random_embeddings(gf::Rng& rng, int vocab, int in_dim, int d) {
  return {normal_vec(rng, std::size_t(vocab) * d), normal_vec(rng, std::size_t(in_dim) * d),
          normal_vec(rng, std::size_t(3) * d)};
}

}  // namespace

TEST_CASE("patchify round trip and index arithmetic") {
  PatchGrid g{8, 4, 1};
  std::vector<float> img(64);
  for (int i = 0; i < 64; ++i) img[i] = static_cast<float>(i);
  auto p = patchify<float>(img, g);
  REQUIRE(p.size() == 64);
  CHECK(g.count() == 4);
  CHECK(g.dim() == 16);
  // Patch (0,0) is the top-left 4x4 block read row-major.
  for (int dy = 0; dy < 4; ++dy)
    for (int dx = 0; dx < 4; ++dx) CHECK(p[dy * 4 + dx] == float(dy * 8 + dx));
  // Patch 1 is (0,1): columns 4..7 of rows 0..3.
  CHECK(p[16] == 4.0f);
  // Patch 2 is (1,0).
  CHECK(p[32] == 32.0f);
  CHECK(unpatchify<float>(p, g) == img);

  PatchGrid rgb{16, 4, 3};
  gf::Rng rng(1);
  std::vector<double> planes(3 * 256);
  for (auto& v : planes) v = rng.uniform(-1, 1);
  auto q = patchify<double>(planes, rgb);
  CHECK(unpatchify<double>(q, rgb) == planes);
  // Channel-major within a patch: channel 1 of patch 0 starts at offset 16.
  CHECK(q[16] == planes[256]);

  std::vector<float> constant(64, 0.5f);
  for (float v : patchify<float>(constant, g)) CHECK(v == 0.5f);

  CHECK_THROWS_AS(patchify<float>(std::vector<float>(63), g), gf::Error);
  PatchGrid bad{10, 4, 1};
  CHECK_THROWS_AS(bad.validate(), gf::Error);
}

TEST_CASE("sequence layout segments and coordinates") {
  SequenceLayout l = make_layout(3, 4);
  CHECK(l.total() == 3 + 48);
  CHECK(l.offset(Modality::kImage) == 3);
  CHECK(l.offset(Modality::kBox) == 19);
  CHECK(l.offset(Modality::kCondition) == 35);
  CHECK(l.modality[2] == Modality::kText);
  CHECK(l.coords[2] == Coord{0, 2});
  CHECK(l.modality[3] == Modality::kImage);
  CHECK(l.coords[3 + 5] == Coord{1, 1});
  CHECK(l.coords[19 + 5] == Coord{1, 1});
  CHECK(l.coords[35 + 5] == Coord{1, 1});
}

TEST_CASE("assemble_sequence linearity and routing") {
  gf::Rng rng(2);
  const int d = 8, vocab = 5, in_dim = 6, img_dim = 2, n = 4;
  Embeddings e = random_embeddings(rng, vocab, in_dim, d);
  const std::vector<int> prompt{1, 4};

  SUBCASE("zero inputs and zero modality embeddings give zero visual tokens") {
    std::fill(e.modality.begin(), e.modality.end(), 0.0);
    std::vector<double> zi(n * img_dim, 0.0), zb(n * in_dim, 0.0);
    auto seq = assemble_sequence<double>(prompt, zi, zb, zi, img_dim, in_dim, e.view(vocab, in_dim, d), 16);
    for (std::size_t i = 2 * d; i < seq.tokens.size(); ++i) CHECK(seq.tokens[i] == 0.0);
    for (int j = 0; j < d; ++j) CHECK(seq.tokens[j] == e.table[1 * d + j]);
  }
  SUBCASE("identical image and box patches differ by e_img - e_box") {
    std::vector<double> patches = normal_vec(rng, n * img_dim);
    std::vector<double> boxp(n * in_dim, 0.0);
    for (int r = 0; r < n; ++r)
      for (int k = 0; k < img_dim; ++k) boxp[r * in_dim + k] = patches[r * img_dim + k];
    auto seq = assemble_sequence<double>(prompt, patches, boxp, patches, img_dim, in_dim,
                                         e.view(vocab, in_dim, d), 16);
    const int oi = seq.layout.offset(Modality::kImage), ob = seq.layout.offset(Modality::kBox);
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < d; ++j)
        CHECK(seq.tokens[(oi + r) * d + j] - seq.tokens[(ob + r) * d + j] ==
              doctest::Approx(e.modality[j] - e.modality[d + j]).epsilon(1e-12));
  }
  SUBCASE("swapping patch rows permutes token rows only") {
    std::vector<double> pi = normal_vec(rng, n * img_dim), pb = normal_vec(rng, n * in_dim),
                        pc = normal_vec(rng, n * img_dim);
    auto base = assemble_sequence<double>(prompt, pi, pb, pc, img_dim, in_dim, e.view(vocab, in_dim, d), 16);
    std::vector<double> swapped = pi;
    std::swap_ranges(swapped.begin(), swapped.begin() + img_dim, swapped.begin() + 3 * img_dim);
    auto s = assemble_sequence<double>(prompt, swapped, pb, pc, img_dim, in_dim, e.view(vocab, in_dim, d), 16);
    const int oi = base.layout.offset(Modality::kImage);
    for (int j = 0; j < d; ++j) {
      CHECK(s.tokens[(oi + 0) * d + j] == base.tokens[(oi + 3) * d + j]);
      CHECK(s.tokens[(oi + 3) * d + j] == base.tokens[(oi + 0) * d + j]);
      CHECK(s.tokens[(oi + 1) * d + j] == base.tokens[(oi + 1) * d + j]);
    }
    CHECK(s.layout.coords == base.layout.coords);
    for (std::size_t i = 0; i < base.tokens.size(); ++i) {
      const int row = static_cast<int>(i) / d;
      if (row == oi || row == oi + 3) continue;
      CHECK(s.tokens[i] == base.tokens[i]);
    }
  }
  SUBCASE("streams are distinguishable") {
    std::vector<double> pi = normal_vec(rng, n * img_dim), pb = normal_vec(rng, n * in_dim),
                        pc = normal_vec(rng, n * img_dim);
    auto seq = assemble_sequence<double>(prompt, pi, pb, pc, img_dim, in_dim, e.view(vocab, in_dim, d), 16);
    const int total = seq.layout.total();
    for (int a = 2; a < total; ++a)
      for (int b = a + 1; b < total; ++b) {
        if (seq.layout.modality[a] == seq.layout.modality[b]) continue;
        bool same = true;
        for (int j = 0; j < d; ++j) same = same && seq.tokens[a * d + j] == seq.tokens[b * d + j];
        CHECK_FALSE(same);
      }
  }
  SUBCASE("length overflow") {
    std::vector<double> pi(n * img_dim), pb(n * in_dim);
    const std::vector<int> long_prompt(17, 0);
    try {
      assemble_sequence<double>(long_prompt, pi, pb, pi, img_dim, in_dim, e.view(vocab, in_dim, d), 16);
      FAIL("expected length-overflow");
    } catch (const gf::Error& err) {
      CHECK(err.code() == gf::Errc::kLengthOverflow);
    }
  }
}

TEST_CASE("rope split and identity at the origin") {
  RopeSplit s = rope_split(32);
  CHECK(s.modality == 4);
  CHECK(s.y == 6);
  CHECK(s.x == 6);
  CHECK_THROWS_AS(rope_split(7), gf::Error);
  try {
    rope_split(6);
  } catch (const gf::Error& e) {
    CHECK(e.code() == gf::Errc::kBadHeadDim);
  }
  gf::Rng rng(3);
  std::vector<double> q = normal_vec(rng, 32), r = q;
  rope_rotate<double>(r, Modality::kText, {0, 0});
  CHECK(r == q);
}

TEST_CASE("rope dot products depend only on the coordinate difference") {
  gf::Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int hd = 8 * static_cast<int>(rng.uniform_int(1, 6));
    const auto m = static_cast<Modality>(rng.uniform_int(0, 3));
    auto q = normal_vec(rng, hd), k = normal_vec(rng, hd);
    const Coord a{int(rng.uniform_int(0, 20)), int(rng.uniform_int(0, 20))};
    const Coord b{int(rng.uniform_int(0, 20)), int(rng.uniform_int(0, 20))};
    const Coord shift{int(rng.uniform_int(-30, 30)), int(rng.uniform_int(-30, 30))};
    auto q1 = q, k1 = k, q2 = q, k2 = k;
    rope_rotate<double>(q1, m, a);
    rope_rotate<double>(k1, m, b);
    rope_rotate<double>(q2, m, {a.y + shift.y, a.x + shift.x});
    rope_rotate<double>(k2, m, {b.y + shift.y, b.x + shift.x});
    CHECK(std::abs(dot(q1, k1) - dot(q2, k2)) < 1e-6);
  }
}

TEST_CASE("rope modality axis separates streams") {
  gf::Rng rng(5);
  int differ = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto q = normal_vec(rng, 32), k = normal_vec(rng, 32);
    const Coord a{int(rng.uniform_int(0, 15)), int(rng.uniform_int(0, 15))};
    const Coord b{int(rng.uniform_int(0, 15)), int(rng.uniform_int(0, 15))};
    auto q1 = q, k1 = k, q2 = q, k2 = k;
    rope_rotate<double>(q1, Modality::kImage, a);
    rope_rotate<double>(k1, Modality::kImage, b);
    rope_rotate<double>(q2, Modality::kImage, a);
    rope_rotate<double>(k2, Modality::kBox, b);
    differ += std::abs(dot(q1, k1) - dot(q2, k2)) > 1e-9;
  }
  CHECK(differ == 100);
}

TEST_CASE("rope table matches the standalone rotation and inverts") {
  SequenceLayout l = make_layout(3, 4);
  RopeTable table(l.modality, l.coords, 16);
  gf::Rng rng(6);
  for (int tok = 0; tok < l.total(); ++tok) {
    auto v = normal_vec(rng, 16), w = v;
    table.apply(v.data(), tok);
    rope_rotate<double>(w, l.modality[tok], l.coords[tok]);
    for (int j = 0; j < 16; ++j) CHECK(v[j] == doctest::Approx(w[j]).epsilon(1e-14));
  }
  for (int tok = 0; tok < l.total(); ++tok) {
    const auto v0 = normal_vec(rng, 16);
    auto v = v0;
    table.apply(v.data(), tok);
    table.apply(v.data(), tok, true);
    for (int j = 0; j < 16; ++j) CHECK(v[j] == doctest::Approx(v0[j]).epsilon(1e-12));
  }
}
