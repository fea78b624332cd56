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

#include "glyphflow/layout/layout.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "glyphflow/common/error.hpp"
#include "json.hpp"

namespace gf::layout {

namespace {

Rgb hue_to_rgb(double hue_deg) {
  const double h = std::fmod(hue_deg, 360.0) / 60.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1; g = x; break;
    case 1: r = x; g = 1; break;
    case 2: g = 1; b = x; break;
    case 3: g = x; b = 1; break;
    case 4: r = x; b = 1; break;
    default: r = 1; b = x; break;
  }
  auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
  return {q(r), q(g), q(b)};
}

std::string box_tag(std::size_t i) { return "box " + std::to_string(i) + ": "; }

}  // namespace

int max_channel_distance(Rgb a, Rgb b) {
  int d = 0;
  for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(int(a[c]) - int(b[c])));
  return d;
}

Palette::Palette(int size) {
  require(size >= 1, Errc::kInvalidArgument, "palette size must be positive");
  int step = 7;
  while (std::gcd(step, size) != 1) ++step;
  colors_.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    const int slot = (step * i) % size;
    colors_.push_back(hue_to_rgb(360.0 * slot / size));
  }
}

int Palette::nearest(Rgb pixel, int threshold) const {
  int best = -1;
  int best_d = threshold + 1;
  for (int i = 0; i < size(); ++i) {
    const int d = max_channel_distance(pixel, colors_[static_cast<std::size_t>(i)]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

void validate(const LayoutSpec& layout, int palette_size) {
  require(layout.canvas > 0, Errc::kInvalidLayout, "canvas must be positive");
  require(static_cast<int>(layout.boxes.size()) <= palette_size, Errc::kPaletteExhausted,
          "layout has more boxes than palette entries");
  for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
    const CharBox& b = layout.boxes[i];
    require(b.order == static_cast<int>(i), Errc::kInvalidLayout,
            box_tag(i) + "order must equal its position in the list");
    require(b.glyph >= 0, Errc::kInvalidLayout, box_tag(i) + "negative glyph id");
    require(b.w >= kMinBoxEdge && b.h >= kMinBoxEdge, Errc::kBelowMinSize,
            box_tag(i) + "smaller than the 4x4 minimum");
    require(b.x >= 0 && b.y >= 0 && b.x + b.w <= layout.canvas && b.y + b.h <= layout.canvas,
            Errc::kOutOfCanvas, box_tag(i) + "extends outside the canvas");
  }
}

bool is_valid(const LayoutSpec& layout, int palette_size) {
  try {
    validate(layout, palette_size);
    return true;
  } catch (const Error&) {
    return false;
  }
}

void renumber(LayoutSpec& layout) {
  for (std::size_t i = 0; i < layout.boxes.size(); ++i)
    layout.boxes[i].order = static_cast<int>(i);
}

RgbImage render_box_map(const LayoutSpec& layout, std::span<const Rgb> colors) {
  RgbImage img(layout.canvas, layout.canvas);
  for (const CharBox& b : layout.boxes) {
    require(b.order >= 0 && b.order < static_cast<int>(colors.size()), Errc::kPaletteExhausted,
            "order index " + std::to_string(b.order) + " exceeds the palette");
    const Rgb c = colors[static_cast<std::size_t>(b.order)];
    const int x1 = std::min(b.x + b.w, layout.canvas), y1 = std::min(b.y + b.h, layout.canvas);
    for (int y = std::max(b.y, 0); y < y1; ++y)
      for (int x = std::max(b.x, 0); x < x1; ++x) img.set(x, y, c);
  }
  return img;
}

RgbImage render_box_map(const LayoutSpec& layout, const Palette& palette) {
  return render_box_map(layout, palette.colors());
}

LayoutSpec decode_box_map(const RgbImage& image, const Palette& palette,
                          std::span<const int> glyphs) {
  require(image.width == image.height, Errc::kDimensionMismatch, "box map must be square");
  struct Extent {
    int count = 0;
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
  };
  std::vector<Extent> ext(static_cast<std::size_t>(palette.size()));
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const int idx = palette.nearest(image.at(x, y));
      if (idx < 0) continue;
      Extent& e = ext[static_cast<std::size_t>(idx)];
      ++e.count;
      e.x0 = std::min(e.x0, x);
      e.y0 = std::min(e.y0, y);
      e.x1 = std::max(e.x1, x);
      e.y1 = std::max(e.y1, y);
    }
  }
  LayoutSpec out;
  out.canvas = image.width;
  for (int i = 0; i < palette.size(); ++i) {
    const Extent& e = ext[static_cast<std::size_t>(i)];
    if (e.count < kMinDecodedArea) continue;
    CharBox b;
    b.order = i;
    b.glyph = i < static_cast<int>(glyphs.size()) ? glyphs[static_cast<std::size_t>(i)] : 0;
    b.x = e.x0;
    b.y = e.y0;
    b.w = e.x1 - e.x0 + 1;
    b.h = e.y1 - e.y0 + 1;
    out.boxes.push_back(b);
  }
  return out;
}

double intersection_area(const CharBox& a, const CharBox& b) {
  const int ix = std::max(0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const int iy = std::max(0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  return static_cast<double>(ix) * iy;
}

double iou(const CharBox& a, const CharBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = static_cast<double>(a.area()) + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

bool overlaps(const CharBox& a, const CharBox& b) { return intersection_area(a, b) > 0.0; }

LayoutSpec apply_edit(const LayoutSpec& layout, const Edit& e, int palette_size) {
  LayoutSpec out = layout;
  const int n = static_cast<int>(out.boxes.size());
  auto target = [&](int index) -> CharBox& {
    require(index >= 0 && index < n, Errc::kInvalidTarget,
            "edit targets missing box " + std::to_string(index));
    return out.boxes[static_cast<std::size_t>(index)];
  };
  std::visit(
      [&](const auto& op) {
        using Op = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<Op, edit::Move>) {
          CharBox& b = target(op.index);
          b.x += op.dx;
          b.y += op.dy;
        } else if constexpr (std::is_same_v<Op, edit::Resize>) {
          CharBox& b = target(op.index);
          b.w = op.w;
          b.h = op.h;
        } else if constexpr (std::is_same_v<Op, edit::Delete>) {
          target(op.index);
          out.boxes.erase(out.boxes.begin() + op.index);
        } else if constexpr (std::is_same_v<Op, edit::Insert>) {
          require(op.index >= 0 && op.index <= n, Errc::kInvalidTarget,
                  "insertion point " + std::to_string(op.index) + " out of range");
          out.boxes.insert(out.boxes.begin() + op.index, op.box);
        } else if constexpr (std::is_same_v<Op, edit::ReplaceGlyph>) {
          require(op.glyph >= 0, Errc::kInvalidTarget, "negative glyph id");
          target(op.index).glyph = op.glyph;
        }
      },
      e);
  renumber(out);
  validate(out, palette_size);
  return out;
}

std::string to_json(const LayoutSpec& layout) {
  nlohmann::json j;
  j["canvas"] = layout.canvas;
  j["boxes"] = nlohmann::json::array();
  for (const CharBox& b : layout.boxes)
    j["boxes"].push_back(
        {{"glyph", b.glyph}, {"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"order", b.order}});
  return j.dump();
}

LayoutSpec from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    fail(Errc::kInvalidLayout, std::string("malformed layout JSON: ") + ex.what());
  }
  require(j.is_object(), Errc::kInvalidLayout, "layout must be a JSON object");
  require(j.contains("canvas") && j["canvas"].is_number_integer(), Errc::kInvalidLayout,
          "layout needs an integer 'canvas'");
  require(j.contains("boxes") && j["boxes"].is_array(), Errc::kInvalidLayout,
          "layout needs a 'boxes' array");
  LayoutSpec out;
  out.canvas = j["canvas"].get<int>();
  const auto& boxes = j["boxes"];
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    require(b.is_object(), Errc::kInvalidLayout, box_tag(i) + "must be an object");
    CharBox box;
    const std::array<std::pair<const char*, int*>, 6> fields{{{"glyph", &box.glyph},
                                                              {"x", &box.x},
                                                              {"y", &box.y},
                                                              {"w", &box.w},
                                                              {"h", &box.h},
                                                              {"order", &box.order}}};
    for (auto [name, slot] : fields) {
      require(b.contains(name) && b[name].is_number_integer(), Errc::kInvalidLayout,
              box_tag(i) + "missing integer field '" + name + "'");
      *slot = b[name].get<int>();
    }
    out.boxes.push_back(box);
  }
  return out;
}

}  // namespace gf::layout
