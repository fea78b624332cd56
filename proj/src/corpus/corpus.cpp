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

#include "glyphflow/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <thread>

#include "glyphflow/common/kv.hpp"

namespace gf::corpus {

using layout::CharBox;
using layout::LayoutSpec;

// ---- atlas ----------------------------------------------------------------

std::vector<StyleSpec> default_styles() {
  return {
      {0, 0.0, 0, 0, 1.0},
      {1, 0.25, 0, 0, 1.0},
      {2, 0.0, 1, 1, 0.85},
      {3, -0.2, 1, 0, 0.6},
  };
}

int hamming(const GlyphBitmap& a, const GlyphBitmap& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] != 0) != (b[i] != 0);
  return d;
}

int ink_count(const GlyphBitmap& g) {
  int n = 0;
  for (auto v : g) n += v != 0;
  return n;
}

namespace {

void stroke(GlyphBitmap& g, Rng& rng) {
  constexpr int n = kGlyphRaster;
  auto put = [&](int r, int c) {
    if (r >= 0 && r < n && c >= 0 && c < n) g[static_cast<std::size_t>(r * n + c)] = 1;
  };
  const int kind = static_cast<int>(rng.uniform_int(0, 3));
  if (kind <= 1) {  // horizontal or vertical bar
    const int line = static_cast<int>(rng.uniform_int(0, n - 1));
    const int start = static_cast<int>(rng.uniform_int(0, n - 3));
    const int len = static_cast<int>(rng.uniform_int(3, n - start));
    for (int i = 0; i < len; ++i) kind == 0 ? put(line, start + i) : put(start + i, line);
  } else {  // diagonal, descending or ascending
    const int c0 = static_cast<int>(rng.uniform_int(0, n - 3));
    const int r0 = kind == 2 ? static_cast<int>(rng.uniform_int(0, n - 3))
                             : static_cast<int>(rng.uniform_int(2, n - 1));
    const int room = kind == 2 ? std::min(n - r0, n - c0) : std::min(r0 + 1, n - c0);
    const int len = static_cast<int>(rng.uniform_int(3, room));
    for (int i = 0; i < len; ++i) put(kind == 2 ? r0 + i : r0 - i, c0 + i);
  }
}

}  // namespace

GlyphAtlas GlyphAtlas::procedural(int glyph_count, std::uint64_t seed) {
  require(glyph_count >= 1, Errc::kInvalidArgument, "glyph count must be positive");
  Rng rng(seed);
  std::vector<GlyphBitmap> glyphs;
  for (int attempt = 0; static_cast<int>(glyphs.size()) < glyph_count; ++attempt) {
    require(attempt < 1000000, Errc::kCapacityExceeded, "cannot build a distinct glyph set");
    GlyphBitmap g{};
    const int strokes = static_cast<int>(rng.uniform_int(2, 4));
    for (int s = 0; s < strokes; ++s) stroke(g, rng);
    const int ink = ink_count(g);
    if (ink < 8 || ink > 28) continue;
    bool distinct = true;
    for (const auto& other : glyphs) distinct = distinct && hamming(g, other) >= 8;
    if (distinct) glyphs.push_back(g);
  }
  return GlyphAtlas(std::move(glyphs), default_styles());
}

GlyphAtlas::GlyphAtlas(std::vector<GlyphBitmap> glyphs, std::vector<StyleSpec> styles)
    : glyphs_(std::move(glyphs)), styles_(std::move(styles)) {
  require(!glyphs_.empty() && !styles_.empty(), Errc::kInvalidArgument, "empty atlas");
  for (const auto& g : glyphs_)
    require(ink_count(g) > 0, Errc::kInvalidArgument, "atlas glyphs must be nonempty");
  for (std::size_t i = 0; i < styles_.size(); ++i) {
    const StyleSpec& s = styles_[i];
    require(s.id == static_cast<int>(i), Errc::kInvalidArgument, "style ids must be contiguous");
    require(s.ink_gain >= 0.5 && s.ink_gain <= 1.0 && s.thickness >= 0 && s.jitter >= 0,
            Errc::kInvalidArgument, "style parameters out of range");
  }
  require(styles_[0].is_identity(), Errc::kInvalidArgument, "style 0 must be the identity");
}

const GlyphBitmap& GlyphAtlas::glyph(int id) const {
  require(id >= 0 && id < glyph_count(), Errc::kUnknownGlyph,
          "glyph " + std::to_string(id) + " is not in the atlas");
  return glyphs_[static_cast<std::size_t>(id)];
}

const StyleSpec& GlyphAtlas::style(int id) const {
  require(id >= 0 && id < style_count(), Errc::kUnknownGlyph,
          "style " + std::to_string(id) + " is not in the atlas");
  return styles_[static_cast<std::size_t>(id)];
}

// ---- configuration --------------------------------------------------------

std::string to_string(LayoutMode m) {
  switch (m) {
    case LayoutMode::kGrid: return "grid";
    case LayoutMode::kColumn: return "column";
    case LayoutMode::kRandom: return "random";
    case LayoutMode::kScatter: return "scatter";
  }
  return "?";
}

LayoutMode parse_layout_mode(const std::string& s) {
  for (int i = 0; i < kLayoutModeCount; ++i)
    if (to_string(static_cast<LayoutMode>(i)) == s) return static_cast<LayoutMode>(i);
  fail(Errc::kConfigError, "unknown layout mode '" + s + "'");
}

void CorpusConfig::validate() const {
  require(canvas >= layout::kMinBoxEdge, Errc::kConfigError, "canvas too small");
  require(k_min >= 1 && k_max >= k_min, Errc::kConfigError, "need 1 <= k_min <= k_max");
  require(font_size >= layout::kMinBoxEdge && font_size <= canvas, Errc::kConfigError,
          "font size must lie in [4, canvas]");
  double total = 0.0;
  for (double w : mode_weights) {
    require(w >= 0.0, Errc::kConfigError, "negative layout mode weight");
    total += w;
  }
  require(total > 0.0, Errc::kConfigError, "layout mode weights sum to zero");
  require(scale_jitter.lo > 0 && scale_jitter.lo <= scale_jitter.hi, Errc::kConfigError,
          "bad scale jitter range");
  require(aspect_jitter.lo > 0 && aspect_jitter.lo <= aspect_jitter.hi, Errc::kConfigError,
          "bad aspect jitter range");
  require(p_synth >= 0.0 && p_synth <= 1.0, Errc::kConfigError, "p_synth outside [0, 1]");
  require(max_random_iou >= 0.0 && max_random_iou <= 1.0, Errc::kConfigError,
          "max_random_iou outside [0, 1]");
}

// ---- layout sampling --------------------------------------------------------

BoxSize sample_box_size(const CorpusConfig& cfg, Rng& rng) {
  BoxSize b;
  b.scale = rng.uniform(cfg.scale_jitter.lo, cfg.scale_jitter.hi);
  b.aspect = rng.uniform(cfg.aspect_jitter.lo, cfg.aspect_jitter.hi);
  auto edge = [&](double v) {
    return std::clamp(static_cast<int>(std::lround(v)), layout::kMinBoxEdge, cfg.canvas);
  };
  b.w = edge(cfg.font_size * b.scale * b.aspect);
  b.h = edge(cfg.font_size * b.scale / b.aspect);
  return b;
}

namespace {

int ri(Rng& rng, int lo, int hi) { return static_cast<int>(rng.uniform_int(lo, hi)); }

struct Size {
  int w, h;
};

std::vector<Size> sample_sizes(const CorpusConfig& cfg, int k, Rng& rng) {
  std::vector<Size> out;
  for (int i = 0; i < k; ++i) {
    const BoxSize b = sample_box_size(cfg, rng);
    out.push_back({b.w, b.h});
  }
  return out;
}

[[noreturn]] void no_room(LayoutMode mode, int k) {
  fail(Errc::kCapacityExceeded,
       std::to_string(k) + " boxes do not fit in " + to_string(mode) + " mode");
}

LayoutSpec grid_layout(const CorpusConfig& cfg, const std::vector<Size>& sizes, Rng& rng) {
  const int k = static_cast<int>(sizes.size());
  int cell = 0;
  for (auto s : sizes) cell = std::max({cell, s.w, s.h});
  const int per_col = cfg.canvas / cell;
  if (per_col == 0) no_room(LayoutMode::kGrid, k);
  const int rows = std::min(per_col, k);
  const int cols = (k + rows - 1) / rows;
  if (cols * cell > cfg.canvas) no_room(LayoutMode::kGrid, k);
  const int ox = ri(rng, 0, cfg.canvas - cols * cell);
  const int oy = ri(rng, 0, cfg.canvas - rows * cell);
  LayoutSpec out{cfg.canvas, {}};
  for (int i = 0; i < k; ++i) {
    const int c = i / rows, r = i % rows;
    const Size s = sizes[static_cast<std::size_t>(i)];
    CharBox b;
    b.w = s.w;
    b.h = s.h;
    b.x = ox + (cols - 1 - c) * cell + ri(rng, 0, cell - s.w);
    b.y = oy + r * cell + ri(rng, 0, cell - s.h);
    out.boxes.push_back(b);
  }
  return out;
}

LayoutSpec column_layout(const CorpusConfig& cfg, const std::vector<Size>& sizes, Rng& rng) {
  const int k = static_cast<int>(sizes.size());
  const int gap = ri(rng, 0, 2);
  // Split k boxes into n columns as evenly as possible, earlier columns longer.
  auto split = [&](int n) {
    std::vector<int> counts(static_cast<std::size_t>(n), k / n);
    for (int c = 0; c < k % n; ++c) ++counts[static_cast<std::size_t>(c)];
    return counts;
  };
  struct Column {
    int first, count, width, height;
  };
  auto columns_for = [&](int n, int g) {
    std::vector<Column> cols;
    int next = 0;
    for (int count : split(n)) {
      Column col{next, count, 0, 0};
      for (int i = next; i < next + count; ++i) {
        col.width = std::max(col.width, sizes[static_cast<std::size_t>(i)].w);
        col.height += sizes[static_cast<std::size_t>(i)].h + (i > next ? g : 0);
      }
      next += count;
      cols.push_back(col);
    }
    return cols;
  };
  auto fits = [&](const std::vector<Column>& cols) {
    int total = 0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (cols[c].height > cfg.canvas) return false;
      total += cols[c].width + (c > 0 ? gap : 0);
    }
    return total <= cfg.canvas;
  };
  std::vector<int> candidates;
  for (int n = 1; n <= k; ++n)
    if (fits(columns_for(n, gap))) candidates.push_back(n);
  if (candidates.empty()) no_room(LayoutMode::kColumn, k);
  const int n = candidates[static_cast<std::size_t>(ri(rng, 0, int(candidates.size()) - 1))];
  const auto cols = columns_for(n, gap);
  int total_w = 0;
  for (std::size_t c = 0; c < cols.size(); ++c) total_w += cols[c].width + (c > 0 ? gap : 0);
  int right = cfg.canvas - ri(rng, 0, cfg.canvas - total_w);
  LayoutSpec out{cfg.canvas, {}};
  for (const Column& col : cols) {
    const int left = right - col.width;
    int y = ri(rng, 0, cfg.canvas - col.height);
    for (int i = col.first; i < col.first + col.count; ++i) {
      const Size s = sizes[static_cast<std::size_t>(i)];
      CharBox b;
      b.w = s.w;
      b.h = s.h;
      b.x = left + (col.width - s.w) / 2;
      b.y = y;
      y += s.h + gap;
      out.boxes.push_back(b);
    }
    right = left - gap;
  }
  return out;
}

LayoutSpec free_layout(const CorpusConfig& cfg, const std::vector<Size>& sizes, Rng& rng,
                       LayoutMode mode) {
  // Sequential placement: each box picks uniformly among all admissible
  // positions; a jammed attempt restarts from scratch.
  auto admissible = [&](const LayoutSpec& l, const CharBox& b) {
    for (const CharBox& o : l.boxes) {
      const bool ok = mode == LayoutMode::kScatter ? !layout::overlaps(o, b)
                                                   : layout::iou(o, b) <= cfg.max_random_iou;
      if (!ok) return false;
    }
    return true;
  };
  std::vector<std::pair<int, int>> spots;
  for (int attempt = 0; attempt < 64; ++attempt) {
    LayoutSpec out{cfg.canvas, {}};
    bool jammed = false;
    for (const Size s : sizes) {
      spots.clear();
      CharBox b;
      b.w = s.w;
      b.h = s.h;
      for (b.y = 0; b.y + s.h <= cfg.canvas; ++b.y)
        for (b.x = 0; b.x + s.w <= cfg.canvas; ++b.x)
          if (admissible(out, b)) spots.emplace_back(b.x, b.y);
      if (spots.empty()) {
        jammed = true;
        break;
      }
      const auto [x, y] = spots[static_cast<std::size_t>(ri(rng, 0, int(spots.size()) - 1))];
      b.x = x;
      b.y = y;
      out.boxes.push_back(b);
    }
    if (jammed) continue;
    std::stable_sort(out.boxes.begin(), out.boxes.end(), [](const CharBox& a, const CharBox& b) {
      return a.y != b.y ? a.y < b.y : a.x < b.x;
    });
    return out;
  }
  no_room(mode, static_cast<int>(sizes.size()));
}

}  // namespace

LayoutSpec sample_layout(const CorpusConfig& cfg, LayoutMode mode, int k, Rng& rng) {
  cfg.validate();
  require(k >= 0, Errc::kInvalidArgument, "negative box count");
  require(k <= layout::kDefaultPaletteSize, Errc::kCapacityExceeded,
          "more boxes than palette colours");
  const auto sizes = sample_sizes(cfg, k, rng);
  LayoutSpec out;
  switch (mode) {
    case LayoutMode::kGrid: out = grid_layout(cfg, sizes, rng); break;
    case LayoutMode::kColumn: out = column_layout(cfg, sizes, rng); break;
    default: out = free_layout(cfg, sizes, rng, mode); break;
  }
  if (k == 0) out = LayoutSpec{cfg.canvas, {}};
  layout::renumber(out);
  layout::validate(out);
  return out;
}

// ---- rendering --------------------------------------------------------------

void draw_glyph(GrayImage& canvas, const GlyphBitmap& glyph, const CharBox& box,
                const StyleSpec& style, Rng& rng) {
  const int w = box.w, h = box.h;
  if (w <= 0 || h <= 0) return;
  auto idx = [w](int u, int v) { return static_cast<std::size_t>(v) * w + u; };
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(w) * h, 0);
  for (int v = 0; v < h; ++v) {
    const int cy = v * kGlyphRaster / h;
    for (int u = 0; u < w; ++u) {
      const int cx = u * kGlyphRaster / w;
      mask[idx(u, v)] = glyph[static_cast<std::size_t>(cy * kGlyphRaster + cx)];
    }
  }
  if (style.slant != 0.0 || style.jitter > 0) {
    std::vector<std::uint8_t> moved(mask.size(), 0);
    for (int v = 0; v < h; ++v) {
      int shift = static_cast<int>(std::lround(style.slant * ((h - 1) / 2.0 - v)));
      if (style.jitter > 0) shift += ri(rng, -style.jitter, style.jitter);
      for (int u = 0; u < w; ++u) {
        const int src = u - shift;
        if (src >= 0 && src < w) moved[idx(u, v)] = mask[idx(src, v)];
      }
    }
    mask.swap(moved);
  }
  if (style.thickness > 0) {
    std::vector<std::uint8_t> grown(mask.size(), 0);
    const int t = style.thickness;
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        std::uint8_t hit = 0;
        for (int dv = -t; dv <= t && !hit; ++dv)
          for (int du = -t; du <= t && !hit; ++du) {
            const int uu = u + du, vv = v + dv;
            hit = uu >= 0 && uu < w && vv >= 0 && vv < h && mask[idx(uu, vv)];
          }
        grown[idx(u, v)] = hit;
      }
    mask.swap(grown);
  }
  const auto ink = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - style.ink_gain)));
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const int x = box.x + u, y = box.y + v;
      if (mask[idx(u, v)] && canvas.contains(x, y)) canvas.at(x, y) = std::min(canvas.at(x, y), ink);
    }
}

GrayImage render_condition(const GlyphAtlas& atlas, const LayoutSpec& layout) {
  GrayImage img(layout.canvas, layout.canvas);
  const StyleSpec& identity = atlas.style(0);
  Rng unused(0);
  for (const CharBox& b : layout.boxes) draw_glyph(img, atlas.glyph(b.glyph), b, identity, unused);
  return img;
}

Triplet render_triplet(const GlyphAtlas& atlas, const LayoutSpec& layout,
                       std::span<const int> glyphs, int style, Rng& rng,
                       const layout::Palette& palette) {
  require(glyphs.size() == layout.boxes.size(), Errc::kDimensionMismatch,
          "prompt has " + std::to_string(glyphs.size()) + " glyphs for " +
              std::to_string(layout.boxes.size()) + " boxes");
  const StyleSpec& spec = atlas.style(style);
  Triplet t;
  t.layout = layout;
  t.prompt.push_back(atlas.style_token(style));
  for (std::size_t i = 0; i < glyphs.size(); ++i) {
    atlas.glyph(glyphs[i]);
    t.layout.boxes[i].glyph = glyphs[i];
    t.prompt.push_back(glyphs[i]);
  }
  t.condition = render_condition(atlas, t.layout);
  if (spec.is_identity()) {
    t.target = t.condition;
  } else {
    t.target = GrayImage(layout.canvas, layout.canvas);
    for (const CharBox& b : t.layout.boxes) draw_glyph(t.target, atlas.glyph(b.glyph), b, spec, rng);
  }
  t.boxmap = layout::render_box_map(t.layout, palette);
  return t;
}

Triplet generate_triplet(const GlyphAtlas& atlas, const CorpusConfig& cfg, std::uint64_t index) {
  Rng rng = Rng::keyed(cfg.seed, {index});
  double total = 0.0;
  for (double w : cfg.mode_weights) total += w;
  double u = rng.uniform() * total;
  int mode = 0;
  while (mode < kLayoutModeCount - 1 &&
         (u >= cfg.mode_weights[static_cast<std::size_t>(mode)] ||
          cfg.mode_weights[static_cast<std::size_t>(mode)] == 0.0)) {
    u -= cfg.mode_weights[static_cast<std::size_t>(mode)];
    ++mode;
  }
  const int k = ri(rng, cfg.k_min, cfg.k_max);
  LayoutSpec l = sample_layout(cfg, static_cast<LayoutMode>(mode), k, rng);
  std::vector<int> glyphs;
  for (int i = 0; i < k; ++i) glyphs.push_back(ri(rng, 0, atlas.glyph_count() - 1));
  const int style = ri(rng, 0, atlas.style_count() - 1);
  return render_triplet(atlas, l, glyphs, style, rng);
}

std::vector<Triplet> generate_corpus(const GlyphAtlas& atlas, const CorpusConfig& cfg,
                                     std::size_t count, int threads) {
  cfg.validate();
  std::vector<Triplet> out(count);
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(count, 1))));
  if (n == 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = generate_triplet(atlas, cfg, i);
    return out;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  for (int t = 0; t < n; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = static_cast<std::size_t>(t); i < count; i += static_cast<std::size_t>(n))
          out[i] = generate_triplet(atlas, cfg, i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---- serialization ------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

void put_u16(std::vector<std::uint8_t>& out, int v) {
  require(v >= 0 && v <= 0xffff, Errc::kIoFailure, "value does not fit in u16");
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

struct Reader {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    require(pos + n <= data.size(), Errc::kIoFailure, "records.bin is truncated");
  }
  int u16() {
    need(2);
    const int v = data[pos] | (data[pos + 1] << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = data.subspan(pos, n);
    pos += n;
    return s;
  }
};

KeyValues manifest_for(const CorpusConfig& cfg, std::size_t count) {
  KeyValues kv;
  kv.set("version", kCorpusVersion);
  cfg.write(kv);
  kv.set("count", static_cast<std::uint64_t>(count));
  return kv;
}

Range range_of(const KeyValues& kv, const std::string& key) {
  const auto v = kv.get_doubles(key);
  require(v.size() == 2, Errc::kConfigError, key + ": expected lo,hi");
  return {v[0], v[1]};
}

}  // namespace

void CorpusConfig::write(KeyValues& kv) const {
  kv.set("canvas", canvas);
  kv.set("k_min", k_min);
  kv.set("k_max", k_max);
  kv.set("font_size", font_size);
  std::string w;
  for (std::size_t i = 0; i < mode_weights.size(); ++i)
    w += (i ? "," : "") + format_double(mode_weights[i]);
  kv.set("mode_weights", w);
  kv.set("scale_jitter", format_double(scale_jitter.lo) + "," + format_double(scale_jitter.hi));
  kv.set("aspect_jitter", format_double(aspect_jitter.lo) + "," + format_double(aspect_jitter.hi));
  kv.set("p_synth", p_synth);
  kv.set("max_random_iou", max_random_iou);
  kv.set("seed", seed);
}

CorpusConfig CorpusConfig::read(const KeyValues& kv) {
  CorpusConfig c;
  auto int_key = [&](const char* k, int& v) {
    if (kv.has(k)) v = static_cast<int>(kv.get_int(k));
  };
  int_key("canvas", c.canvas);
  int_key("k_min", c.k_min);
  int_key("k_max", c.k_max);
  int_key("font_size", c.font_size);
  if (kv.has("mode_weights")) {
    const auto w = kv.get_doubles("mode_weights");
    require(w.size() == c.mode_weights.size(), Errc::kConfigError, "mode_weights needs 4 values");
    std::copy(w.begin(), w.end(), c.mode_weights.begin());
  }
  if (kv.has("scale_jitter")) c.scale_jitter = range_of(kv, "scale_jitter");
  if (kv.has("aspect_jitter")) c.aspect_jitter = range_of(kv, "aspect_jitter");
  if (kv.has("p_synth")) c.p_synth = kv.get_double("p_synth");
  if (kv.has("max_random_iou")) c.max_random_iou = kv.get_double("max_random_iou");
  if (kv.has("seed")) c.seed = kv.get_u64("seed");
  c.validate();
  return c;
}

void write_corpus(const std::string& dir, const CorpusConfig& cfg,
                  std::span<const Triplet> triplets) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::kIoFailure, "cannot create corpus directory " + dir);
  const std::size_t plane = static_cast<std::size_t>(cfg.canvas) * cfg.canvas;
  std::vector<std::uint8_t> bin;
  for (const Triplet& t : triplets) {
    require(t.target.width == cfg.canvas && t.condition.width == cfg.canvas &&
                t.boxmap.width == cfg.canvas && t.target.height == cfg.canvas,
            Errc::kDimensionMismatch, "triplet does not match the corpus canvas");
    std::vector<std::uint8_t> rec;
    rec.insert(rec.end(), t.target.pixels.begin(), t.target.pixels.end());
    rec.insert(rec.end(), t.condition.pixels.begin(), t.condition.pixels.end());
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) rec.push_back(t.boxmap.pixels[i * 3 + c]);
    put_u16(rec, static_cast<int>(t.layout.boxes.size()));
    for (const CharBox& b : t.layout.boxes) {
      put_u16(rec, b.glyph);
      put_u16(rec, b.x);
      put_u16(rec, b.y);
      put_u16(rec, b.w);
      put_u16(rec, b.h);
    }
    put_u16(rec, static_cast<int>(t.prompt.size()));
    for (int tok : t.prompt) put_u16(rec, tok);
    put_u32(bin, static_cast<std::uint32_t>(rec.size()));
    bin.insert(bin.end(), rec.begin(), rec.end());
  }
  write_file_bytes((fs::path(dir) / "records.bin").string(), bin);
  const std::string manifest = manifest_for(cfg, triplets.size()).str();
  write_file_bytes((fs::path(dir) / "manifest.txt").string(),
                   std::span(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
}

Corpus read_corpus(const std::string& dir) {
  const auto mbytes = read_file_bytes((fs::path(dir) / "manifest.txt").string());
  KeyValues kv;
  Corpus out;
  std::uint64_t count = 0;
  try {
    kv = KeyValues::parse(std::string(mbytes.begin(), mbytes.end()));
    require(kv.get_int("version") == kCorpusVersion, Errc::kFormatVersionMismatch,
            "unsupported corpus version " + kv.get("version"));
    CorpusConfig& c = out.config;
    c.canvas = static_cast<int>(kv.get_int("canvas"));
    c.k_min = static_cast<int>(kv.get_int("k_min"));
    c.k_max = static_cast<int>(kv.get_int("k_max"));
    c.font_size = static_cast<int>(kv.get_int("font_size"));
    const auto w = kv.get_doubles("mode_weights");
    require(w.size() == c.mode_weights.size(), Errc::kConfigError, "mode_weights needs 4 values");
    std::copy(w.begin(), w.end(), c.mode_weights.begin());
    c.scale_jitter = range_of(kv, "scale_jitter");
    c.aspect_jitter = range_of(kv, "aspect_jitter");
    c.p_synth = kv.get_double("p_synth");
    c.max_random_iou = kv.get_double("max_random_iou");
    c.seed = kv.get_u64("seed");
    count = kv.get_u64("count");
    c.validate();
  } catch (const Error& e) {
    if (e.code() == Errc::kFormatVersionMismatch) throw;
    fail(Errc::kFormatVersionMismatch, std::string("corrupted corpus manifest: ") + e.what());
  }
  const int canvas = out.config.canvas;
  const std::size_t plane = static_cast<std::size_t>(canvas) * canvas;
  const auto bin = read_file_bytes((fs::path(dir) / "records.bin").string());
  Reader r{bin};
  for (std::uint64_t n = 0; n < count; ++n) {
    const std::uint32_t len = r.u32();
    Reader rec{r.bytes(len)};
    Triplet t;
    auto tp = rec.bytes(plane);
    t.target = GrayImage(canvas, canvas);
    std::copy(tp.begin(), tp.end(), t.target.pixels.begin());
    auto cp = rec.bytes(plane);
    t.condition = GrayImage(canvas, canvas);
    std::copy(cp.begin(), cp.end(), t.condition.pixels.begin());
    t.boxmap = RgbImage(canvas, canvas);
    for (int c = 0; c < 3; ++c) {
      auto bp = rec.bytes(plane);
      for (std::size_t i = 0; i < plane; ++i) t.boxmap.pixels[i * 3 + c] = bp[i];
    }
    t.layout.canvas = canvas;
    const int nb = rec.u16();
    for (int i = 0; i < nb; ++i) {
      CharBox b;
      b.glyph = rec.u16();
      b.x = rec.u16();
      b.y = rec.u16();
      b.w = rec.u16();
      b.h = rec.u16();
      b.order = i;
      t.layout.boxes.push_back(b);
    }
    const int np = rec.u16();
    for (int i = 0; i < np; ++i) t.prompt.push_back(rec.u16());
    require(rec.pos == len, Errc::kIoFailure, "record " + std::to_string(n) + " has trailing bytes");
    out.triplets.push_back(std::move(t));
  }
  require(r.pos == bin.size(), Errc::kIoFailure, "records.bin has more records than the manifest");
  return out;
}

}  // namespace gf::corpus
