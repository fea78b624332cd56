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

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glyphflow/common/error.hpp"
#include "glyphflow/common/image.hpp"
#include "glyphflow/common/kv.hpp"
#include "glyphflow/common/rng.hpp"
#include "glyphflow/layout/layout.hpp"

namespace gf::corpus {

inline constexpr int kGlyphRaster = 7;
inline constexpr int kDefaultGlyphCount = 32;
inline constexpr int kCorpusVersion = 1;

using GlyphBitmap = std::array<std::uint8_t, kGlyphRaster * kGlyphRaster>;

struct StyleSpec {
  int id = 0;
  double slant = 0.0;     // horizontal shear per row, relative to the box centre
  int thickness = 0;      // dilation radius in pixels
  int jitter = 0;         // per-row displacement amplitude in pixels
  double ink_gain = 1.0;  // 1 is full black ink

  bool is_identity() const {
    return slant == 0.0 && thickness == 0 && jitter == 0 && ink_gain == 1.0;
  }
};

// Procedural glyph alphabet and the fixed style table.
class GlyphAtlas {
 public:
  static GlyphAtlas procedural(int glyph_count = kDefaultGlyphCount,
                               std::uint64_t seed = 0x61746c6173ULL);
  GlyphAtlas(std::vector<GlyphBitmap> glyphs, std::vector<StyleSpec> styles);

  int glyph_count() const { return static_cast<int>(glyphs_.size()); }
  int style_count() const { return static_cast<int>(styles_.size()); }
  const GlyphBitmap& glyph(int id) const;
  const StyleSpec& style(int id) const;

  // Token ids: glyphs first, then one token per style, then the null token.
  int style_token(int style) const { return glyph_count() + style; }
  int null_token() const { return glyph_count() + style_count(); }
  int vocab_size() const { return null_token() + 1; }
  bool is_style_token(int token) const {
    return token >= glyph_count() && token < null_token();
  }

 private:
  std::vector<GlyphBitmap> glyphs_;
  std::vector<StyleSpec> styles_;
};

std::vector<StyleSpec> default_styles();
int hamming(const GlyphBitmap& a, const GlyphBitmap& b);
int ink_count(const GlyphBitmap& g);

enum class LayoutMode { kGrid = 0, kColumn = 1, kRandom = 2, kScatter = 3 };
inline constexpr int kLayoutModeCount = 4;
std::string to_string(LayoutMode m);
LayoutMode parse_layout_mode(const std::string& s);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct CorpusConfig {
  int canvas = 64;
  int k_min = 3;
  int k_max = 8;
  int font_size = 16;
  std::array<double, kLayoutModeCount> mode_weights{1.0, 1.0, 1.0, 1.0};
  Range scale_jitter{0.85, 1.15};
  Range aspect_jitter{0.9, 1.1};
  double p_synth = 0.5;
  double max_random_iou = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
  void write(KeyValues& kv) const;
  // Starts from the defaults and overrides every key present.
  static CorpusConfig read(const KeyValues& kv);
  friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

struct Triplet {
  GrayImage target;
  GrayImage condition;
  RgbImage boxmap;
  layout::LayoutSpec layout;
  std::vector<int> prompt;  // style token, then glyph tokens in reading order

  int style(const GlyphAtlas& atlas) const { return prompt.at(0) - atlas.glyph_count(); }
  std::vector<int> glyphs() const { return {prompt.begin() + 1, prompt.end()}; }
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct BoxSize {
  double scale = 1.0;
  double aspect = 1.0;
  int w = 0;
  int h = 0;
};
// Edge lengths font*s*r by font*s/r, rounded and clamped to [4, canvas].
BoxSize sample_box_size(const CorpusConfig& cfg, Rng& rng);

// Throws capacity-exceeded if k boxes cannot be placed in the requested mode.
layout::LayoutSpec sample_layout(const CorpusConfig& cfg, LayoutMode mode, int k, Rng& rng);

// Glyph drawing helpers, shared by the renderer and the edit path.
void draw_glyph(GrayImage& canvas, const GlyphBitmap& glyph, const layout::CharBox& box,
                const StyleSpec& style, Rng& rng);
GrayImage render_condition(const GlyphAtlas& atlas, const layout::LayoutSpec& layout);

// `glyphs` lists one glyph id per box, in reading order.
Triplet render_triplet(const GlyphAtlas& atlas, const layout::LayoutSpec& layout,
                       std::span<const int> glyphs, int style, Rng& rng,
                       const layout::Palette& palette = layout::Palette());

// One complete sample for corpus index `index`; all randomness keyed on (seed, index).
Triplet generate_triplet(const GlyphAtlas& atlas, const CorpusConfig& cfg, std::uint64_t index);
std::vector<Triplet> generate_corpus(const GlyphAtlas& atlas, const CorpusConfig& cfg,
                                     std::size_t count, int threads = 1);

template <class T>
const T& mix_pools(std::span<const T> pool_a, std::span<const T> pool_b, double p_synth,
                   Rng& rng) {
  require(!pool_a.empty() && !pool_b.empty(), Errc::kEmptyPool, "both pools must be nonempty");
  require(p_synth >= 0.0 && p_synth <= 1.0, Errc::kInvalidArgument, "p_synth outside [0, 1]");
  const bool synth = rng.bernoulli(p_synth);
  std::span<const T> pool = synth ? pool_b : pool_a;
  return pool[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(pool.size()) - 1))];
}

struct Corpus {
  CorpusConfig config;
  std::vector<Triplet> triplets;
};

void write_corpus(const std::string& dir, const CorpusConfig& cfg,
                  std::span<const Triplet> triplets);
Corpus read_corpus(const std::string& dir);

}  // namespace gf::corpus
