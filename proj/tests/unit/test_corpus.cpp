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

#include <filesystem>
#include <set>

#include "doctest.h"
#include "glyphflow/common/error.hpp"
#include "glyphflow/common/image.hpp"
#include "glyphflow/corpus/corpus.hpp"

using namespace gf::corpus;
using gf::GrayImage;
using gf::layout::CharBox;
using gf::layout::LayoutSpec;

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("glyphflow_corpus_" + name);
  fs::remove_all(p);
  return p;
}

gf::Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const gf::Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return gf::Errc::kInvalidArgument;
}

// Straight-line reference rasterizer: glyph cell c covers pixels
// [ceil(c*w/7), ceil((c+1)*w/7)) along each axis.
GrayImage naive_render(const GlyphBitmap& g, const CharBox& b, int canvas) {
  GrayImage img(canvas, canvas);
  auto lo = [](int c, int extent) { return (c * extent + kGlyphRaster - 1) / kGlyphRaster; };
  for (int cy = 0; cy < kGlyphRaster; ++cy)
    for (int cx = 0; cx < kGlyphRaster; ++cx) {
      if (!g[static_cast<std::size_t>(cy * kGlyphRaster + cx)]) continue;
      for (int y = lo(cy, b.h); y < lo(cy + 1, b.h); ++y)
        for (int x = lo(cx, b.w); x < lo(cx + 1, b.w); ++x) img.at(b.x + x, b.y + y) = 0;
    }
  return img;
}

}  // namespace

TEST_CASE("procedural atlas is distinct and deterministic") {
  const GlyphAtlas a = GlyphAtlas::procedural();
  const GlyphAtlas b = GlyphAtlas::procedural();
  REQUIRE(a.glyph_count() == 32);
  CHECK(a.style_count() == 4);
  CHECK(a.vocab_size() == 37);
  CHECK(a.style_token(0) == 32);
  CHECK(a.null_token() == 36);
  for (int i = 0; i < a.glyph_count(); ++i) {
    CHECK(a.glyph(i) == b.glyph(i));
    CHECK(ink_count(a.glyph(i)) >= 8);
    CHECK(ink_count(a.glyph(i)) <= 28);
    for (int j = i + 1; j < a.glyph_count(); ++j) CHECK(hamming(a.glyph(i), a.glyph(j)) >= 8);
  }
  CHECK(a.style(0).is_identity());
  CHECK(code_of([&] { a.glyph(32); }) == gf::Errc::kUnknownGlyph);
}

TEST_CASE("grid mode without jitter tiles 2x2") {
  CorpusConfig cfg;
  cfg.font_size = 24;
  cfg.scale_jitter = {1.0, 1.0};
  cfg.aspect_jitter = {1.0, 1.0};
  gf::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    LayoutSpec l = sample_layout(cfg, LayoutMode::kGrid, 4, rng);
    REQUIRE(l.boxes.size() == 4);
    std::set<int> xs, ys;
    for (const auto& b : l.boxes) {
      CHECK(b.w == 24);
      CHECK(b.h == 24);
      CHECK(b.x >= 0);
      CHECK(b.y >= 0);
      CHECK(b.x + b.w <= 64);
      CHECK(b.y + b.h <= 64);
      xs.insert(b.x);
      ys.insert(b.y);
    }
    CHECK(xs.size() == 2);
    CHECK(ys.size() == 2);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j)
        CHECK(gf::layout::intersection_area(l.boxes[i], l.boxes[j]) == 0.0);
    // Reading order: right column first, top to bottom.
    CHECK(l.boxes[0].x > l.boxes[2].x);
    CHECK(l.boxes[0].y < l.boxes[1].y);
  }
}

TEST_CASE("every mode keeps boxes inside the canvas and respects overlap rules") {
  CorpusConfig cfg;
  gf::Rng rng(11);
  for (int m = 0; m < kLayoutModeCount; ++m) {
    const auto mode = static_cast<LayoutMode>(m);
    for (int trial = 0; trial < 300; ++trial) {
      const int k = static_cast<int>(rng.uniform_int(cfg.k_min, cfg.k_max));
      LayoutSpec l = sample_layout(cfg, mode, k, rng);
      REQUIRE(static_cast<int>(l.boxes.size()) == k);
      REQUIRE(gf::layout::is_valid(l));
      for (std::size_t i = 0; i < l.boxes.size(); ++i)
        for (std::size_t j = i + 1; j < l.boxes.size(); ++j) {
          if (mode == LayoutMode::kRandom)
            CHECK(gf::layout::iou(l.boxes[i], l.boxes[j]) <= cfg.max_random_iou);
          else
            CHECK(gf::layout::intersection_area(l.boxes[i], l.boxes[j]) == 0.0);
        }
      if (mode == LayoutMode::kScatter || mode == LayoutMode::kRandom)
        for (std::size_t i = 1; i < l.boxes.size(); ++i)
          CHECK((l.boxes[i - 1].y < l.boxes[i].y ||
                 (l.boxes[i - 1].y == l.boxes[i].y && l.boxes[i - 1].x <= l.boxes[i].x)));
    }
  }
}

TEST_CASE("column mode orders columns right to left") {
  CorpusConfig cfg;
  gf::Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    LayoutSpec l = sample_layout(cfg, LayoutMode::kColumn, 8, rng);
    for (std::size_t i = 1; i < l.boxes.size(); ++i) {
      const auto& a = l.boxes[i - 1];
      const auto& b = l.boxes[i];
      const bool same_column = b.y > a.y && b.x + b.w > a.x && b.x < a.x + a.w;
      const bool next_column = b.x + b.w <= a.x;
      CHECK((same_column || next_column));
    }
  }
}

TEST_CASE("capacity is enforced") {
  CorpusConfig cfg;
  cfg.font_size = 40;
  cfg.scale_jitter = {1.0, 1.0};
  cfg.aspect_jitter = {1.0, 1.0};
  gf::Rng rng(1);
  CHECK(code_of([&] { sample_layout(cfg, LayoutMode::kGrid, 2, rng); }) ==
        gf::Errc::kCapacityExceeded);
  CHECK(code_of([&] { sample_layout(cfg, LayoutMode::kScatter, 3, rng); }) ==
        gf::Errc::kCapacityExceeded);
  CHECK(sample_layout(cfg, LayoutMode::kGrid, 1, rng).boxes.size() == 1);
}

TEST_CASE("paper-scale settings draw 3 to 20 boxes") {
  CorpusConfig cfg;
  cfg.canvas = 512;
  cfg.font_size = 64;
  cfg.k_min = 3;
  cfg.k_max = 20;
  const GlyphAtlas atlas = GlyphAtlas::procedural();
  std::set<std::size_t> seen;
  for (std::uint64_t i = 0; i < 60; ++i) {
    Triplet t = generate_triplet(atlas, cfg, i);
    CHECK(t.layout.boxes.size() >= 3);
    CHECK(t.layout.boxes.size() <= 20);
    seen.insert(t.layout.boxes.size());
  }
  CHECK(seen.size() > 5);
}

TEST_CASE("scale and aspect jitter stay in their ranges") {
  CorpusConfig cfg;
  gf::Rng rng(8);
  double smin = 10, smax = 0, rmin = 10, rmax = 0;
  for (int i = 0; i < 10000; ++i) {
    const BoxSize b = sample_box_size(cfg, rng);
    smin = std::min(smin, b.scale);
    smax = std::max(smax, b.scale);
    rmin = std::min(rmin, b.aspect);
    rmax = std::max(rmax, b.aspect);
    CHECK(b.w == static_cast<int>(std::lround(16 * b.scale * b.aspect)));
    CHECK(b.h == static_cast<int>(std::lround(16 * b.scale / b.aspect)));
  }
  CHECK(smin >= 0.85);
  CHECK(smax <= 1.15);
  CHECK(smin < 0.86);
  CHECK(smax > 1.14);
  CHECK(rmin >= 0.9);
  CHECK(rmax <= 1.1);
}

TEST_CASE("render_triplet basics") {
  const GlyphAtlas atlas = GlyphAtlas::procedural();
  gf::Rng rng(1);
  Triplet empty = render_triplet(atlas, LayoutSpec{64, {}}, {}, 2, rng);
  CHECK(empty.target == GrayImage(64, 64));
  CHECK(empty.condition == GrayImage(64, 64));
  for (auto v : empty.boxmap.pixels) REQUIRE(v == 255);
  CHECK(empty.prompt == std::vector<int>{atlas.style_token(2)});

  LayoutSpec l{64, {CharBox{0, 3, 5, 17, 13, 0}, CharBox{0, 30, 30, 16, 16, 1}}};
  std::vector<int> glyphs{4, 9};
  Triplet t = render_triplet(atlas, l, glyphs, 0, rng);
  CHECK(t.target == t.condition);
  CHECK(t.prompt == std::vector<int>{atlas.style_token(0), 4, 9});
  CHECK(t.layout.boxes[1].glyph == 9);

  CHECK(code_of([&] { render_triplet(atlas, l, std::vector<int>{1}, 0, rng); }) ==
        gf::Errc::kDimensionMismatch);
  CHECK(code_of([&] { render_triplet(atlas, l, std::vector<int>{1, 99}, 0, rng); }) ==
        gf::Errc::kUnknownGlyph);
}

TEST_CASE("single glyph matches the reference rasterizer") {
  const GlyphAtlas atlas = GlyphAtlas::procedural();
  gf::Rng rng(1);
  for (int g = 0; g < atlas.glyph_count(); ++g) {
    const CharBox box{0, 7 + g % 5, 11, 10 + g % 13, 9 + g % 11, 0};
    Triplet t = render_triplet(atlas, LayoutSpec{64, {box}}, std::vector<int>{g}, 0, rng);
    REQUIRE(t.target == naive_render(atlas.glyph(g), box, 64));
  }
}

TEST_CASE("styled strokes stay inside their boxes") {
  const GlyphAtlas atlas = GlyphAtlas::procedural();
  CorpusConfig cfg;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Triplet t = generate_triplet(atlas, cfg, i);
    const auto& spec = atlas.style(t.style(atlas));
    const int ink = static_cast<int>(std::lround(255 * (1 - spec.ink_gain)));
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const int v = t.target.at(x, y);
        if (v == 255) continue;
        CHECK(v == ink);
        bool inside = false;
        for (const auto& b : t.layout.boxes)
          inside = inside || (x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h);
        CHECK(inside);
      }
  }
}

TEST_CASE("generated triplets round-trip through the box codec") {
  const GlyphAtlas atlas = GlyphAtlas::procedural();
  CorpusConfig cfg;
  gf::layout::Palette palette;
  int checked = 0;
  for (std::uint64_t i = 0; i < 300; ++i) {
    Triplet t = generate_triplet(atlas, cfg, i);
    bool overlap = false;
    for (std::size_t a = 0; a < t.layout.boxes.size(); ++a)
      for (std::size_t b = a + 1; b < t.layout.boxes.size(); ++b)
        overlap = overlap || gf::layout::overlaps(t.layout.boxes[a], t.layout.boxes[b]);
    if (overlap) continue;  // later boxes occlude earlier ones by design
    const auto g = t.glyphs();
    CHECK(gf::layout::decode_box_map(t.boxmap, palette, g) == t.layout);
    ++checked;
  }
  CHECK(checked > 200);
}

TEST_CASE("mix_pools follows its Bernoulli parameter") {
  const std::vector<int> a{0, 0, 0}, b{1, 1};
  gf::Rng rng(4);
  for (int i = 0; i < 1000; ++i) CHECK(mix_pools<int>(a, b, 0.0, rng) == 0);
  for (int i = 0; i < 1000; ++i) CHECK(mix_pools<int>(a, b, 1.0, rng) == 1);
  int from_b = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) from_b += mix_pools<int>(a, b, 0.5, rng);
  CHECK(std::abs(double(from_b) / n - 0.5) <= 0.01);
  const std::vector<int> none;
  CHECK(code_of([&] { mix_pools<int>(none, b, 0.5, rng); }) == gf::Errc::kEmptyPool);
}

TEST_CASE("corpus generation is deterministic and thread-count independent") {
  const GlyphAtlas atlas = GlyphAtlas::procedural();
  CorpusConfig cfg;
  cfg.seed = 42;
  auto serial = generate_corpus(atlas, cfg, 64, 1);
  auto parallel = generate_corpus(atlas, cfg, 64, 4);
  auto again = generate_corpus(atlas, cfg, 64, 1);
  CHECK(serial == parallel);
  CHECK(serial == again);
  cfg.seed = 43;
  CHECK(generate_corpus(atlas, cfg, 64, 1) != serial);
}

TEST_CASE("corpus files round-trip bit-exactly") {
  const GlyphAtlas atlas = GlyphAtlas::procedural();
  CorpusConfig cfg;
  cfg.seed = 9;
  cfg.p_synth = 0.3;
  auto triplets = generate_corpus(atlas, cfg, 100, 2);
  const fs::path dir = scratch("roundtrip");
  write_corpus(dir.string(), cfg, triplets);
  Corpus back = read_corpus(dir.string());
  CHECK(back.config == cfg);
  CHECK(back.triplets == triplets);

  const fs::path dir2 = scratch("roundtrip2");
  write_corpus(dir2.string(), cfg, triplets);
  CHECK(gf::read_file_bytes((dir / "records.bin").string()) ==
        gf::read_file_bytes((dir2 / "records.bin").string()));

  const fs::path empty = scratch("empty");
  write_corpus(empty.string(), cfg, {});
  CHECK(read_corpus(empty.string()).triplets.empty());

  fs::remove_all(dir);
  fs::remove_all(dir2);
  fs::remove_all(empty);
}

TEST_CASE("corrupted corpus files fail cleanly") {
  const GlyphAtlas atlas = GlyphAtlas::procedural();
  CorpusConfig cfg;
  auto triplets = generate_corpus(atlas, cfg, 3);
  const fs::path dir = scratch("corrupt");
  write_corpus(dir.string(), cfg, triplets);
  const std::string manifest = (dir / "manifest.txt").string();
  auto original = gf::read_file_bytes(manifest);

  const std::string garbage = "\x01\x02garbage\n";
  gf::write_file_bytes(manifest, std::span(reinterpret_cast<const std::uint8_t*>(garbage.data()),
                                           garbage.size()));
  CHECK(code_of([&] { read_corpus(dir.string()); }) == gf::Errc::kFormatVersionMismatch);

  std::string bumped(original.begin(), original.end());
  bumped.replace(bumped.find("version=1"), 9, "version=7");
  gf::write_file_bytes(manifest, std::span(reinterpret_cast<const std::uint8_t*>(bumped.data()),
                                           bumped.size()));
  CHECK(code_of([&] { read_corpus(dir.string()); }) == gf::Errc::kFormatVersionMismatch);

  gf::write_file_bytes(manifest, original);
  auto records = gf::read_file_bytes((dir / "records.bin").string());
  records.resize(records.size() - 5);
  gf::write_file_bytes((dir / "records.bin").string(), records);
  CHECK(code_of([&] { read_corpus(dir.string()); }) == gf::Errc::kIoFailure);

  CHECK(code_of([] { read_corpus("/nonexistent/glyphflow"); }) == gf::Errc::kIoFailure);
  fs::remove_all(dir);
}
