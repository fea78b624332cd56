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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glyphflow/common/image.hpp"
#include "glyphflow/common/kv.hpp"
#include "glyphflow/common/rng.hpp"
#include "glyphflow/infer/infer.hpp"
#include "glyphflow/layout/layout.hpp"

namespace gf::forensics {

struct DRSConfig {
  std::vector<double> levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> weights;  // empty: uniform 1/K
  int trials = 3;
  std::uint64_t seed = 1;

  void validate() const;
  double weight(std::size_t k) const;
  void write(KeyValues& kv) const;
  static DRSConfig read(const KeyValues& kv);
};

struct DRSLevel {
  double t = 0.0;
  double mean_error = 0.0;
  std::vector<double> trials;
};

struct DRSReport {
  double score = 0.0;
  std::vector<DRSLevel> levels;
  std::string boxes;  // "given" or "predicted" when scored through a model

  std::string to_json() const;
  std::string curve_csv() const;  // t,mean_error
};

// Velocity at (x_t, t). The noise that produced x_t is passed along so that
// test oracles can return the exact velocity; real models ignore it.
using ReconstructionField =
    std::function<std::vector<float>(std::span<const float> x_t, double t, std::span<const float> eps)>;

// x_t = (1 - t) x + t eps with fresh eps; returns x_t - t v(x_t, t).
std::vector<float> single_step_reconstruct(std::span<const float> x_query, double t,
                                           const ReconstructionField& v, Rng& rng);

// Per-pixel mean squared error between x_query and its reconstruction, averaged
// over trials at every level and combined with the level weights.
DRSReport drs_score(std::span<const float> x_query, const ReconstructionField& v,
                    const DRSConfig& cfg);

// Image-stream velocity with clean box and condition rendered from `layout`.
ReconstructionField model_field(const infer::Sampler& sampler, const corpus::GlyphAtlas& atlas,
                                std::span<const int> prompt, const layout::LayoutSpec& layout);

// Scores a grayscale image. Without boxes, Stage 1 plans them first, using the
// query image itself as the condition.
DRSReport score_image(const infer::Sampler& sampler, const corpus::GlyphAtlas& atlas,
                      const GrayImage& image, std::span<const int> prompt,
                      const layout::LayoutSpec* boxes, const DRSConfig& cfg,
                      const infer::IntegratorConfig& plan_cfg);

struct BlobSpec {
  int count = 8;
  double axis_min = 2.0;  // semi-axis range in pixels
  double axis_max = 8.0;
  double p_ink = 0.5;     // probability a blob is painted black rather than white

  void validate() const;
};
inline constexpr int kBlobsLow = 8;
inline constexpr int kBlobsMedium = 20;
inline constexpr int kBlobsHigh = 40;

struct Ellipse {
  double cx = 0.0, cy = 0.0;
  double a = 1.0, b = 1.0;  // semi-axes
  double angle = 0.0;       // radians
  bool ink = true;

  // Pixel (x, y) is covered when its center lies inside the ellipse.
  bool covers(int x, int y) const;
};

std::vector<Ellipse> sample_blobs(const BlobSpec& spec, int width, int height, Rng& rng);
void paint(GrayImage& image, const Ellipse& e);
GrayImage add_blobs(const GrayImage& image, const BlobSpec& spec, Rng& rng);

}  // namespace gf::forensics
