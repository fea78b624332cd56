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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "glyphflow/common/image.hpp"

namespace gf::layout {

inline constexpr int kMinBoxEdge = 4;
inline constexpr int kMinDecodedArea = 16;
inline constexpr int kDecodeThreshold = 64;
inline constexpr int kDefaultPaletteSize = 20;

struct CharBox {
  int glyph = 0;
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  int order = 0;

  int area() const { return w * h; }
  friend bool operator==(const CharBox&, const CharBox&) = default;
};

struct LayoutSpec {
  int canvas = 0;
  std::vector<CharBox> boxes;

  friend bool operator==(const LayoutSpec&, const LayoutSpec&) = default;
};

// One color per order index. Hues are evenly spaced at full saturation and
// value; index i takes hue slot (7 * i) mod size so that consecutive
// reading-order indices land far apart on the wheel.
class Palette {
 public:
  explicit Palette(int size = kDefaultPaletteSize);

  int size() const { return static_cast<int>(colors_.size()); }
  Rgb color(int index) const { return colors_.at(static_cast<std::size_t>(index)); }
  std::span<const Rgb> colors() const { return colors_; }

  // Nearest color under the max-channel metric, or -1 if the best distance
  // exceeds the threshold. Ties resolve to the lower index.
  int nearest(Rgb pixel, int threshold = kDecodeThreshold) const;

 private:
  std::vector<Rgb> colors_;
};

int max_channel_distance(Rgb a, Rgb b);

// Throws gf::Error(kInvalidLayout / kOutOfCanvas / kBelowMinSize) naming the
// offending box index. Orders must be exactly 0..n-1 in list order.
void validate(const LayoutSpec& layout, int palette_size = kDefaultPaletteSize);
bool is_valid(const LayoutSpec& layout, int palette_size = kDefaultPaletteSize);

// Rewrites order indices to 0..n-1 following list order.
void renumber(LayoutSpec& layout);

RgbImage render_box_map(const LayoutSpec& layout, const Palette& palette);
// Same, but box i is filled with colors[order_i]; used for color-jitter augmentation.
RgbImage render_box_map(const LayoutSpec& layout, std::span<const Rgb> colors);

// Recovers boxes from a box-map image. order = palette index; glyph ids are
// taken from `glyphs[order]` when provided (0 otherwise).
LayoutSpec decode_box_map(const RgbImage& image, const Palette& palette,
                          std::span<const int> glyphs = {});

double intersection_area(const CharBox& a, const CharBox& b);
double iou(const CharBox& a, const CharBox& b);
bool overlaps(const CharBox& a, const CharBox& b);

namespace edit {
struct Move {
  int index;
  int dx;
  int dy;
};
struct Resize {
  int index;
  int w;
  int h;
};
struct Delete {
  int index;
};
struct Insert {
  int index;  // position in reading order, 0..n
  CharBox box;
};
struct ReplaceGlyph {
  int index;
  int glyph;
};
}  // namespace edit

using Edit = std::variant<edit::Move, edit::Resize, edit::Delete, edit::Insert, edit::ReplaceGlyph>;

LayoutSpec apply_edit(const LayoutSpec& layout, const Edit& e,
                      int palette_size = kDefaultPaletteSize);

// Wire format: {"canvas": int, "boxes": [{"glyph","x","y","w","h","order"}]}.
std::string to_json(const LayoutSpec& layout);
// Throws gf::Error(kInvalidLayout) with the offending box index on malformed input.
LayoutSpec from_json(const std::string& text);

}  // namespace gf::layout
