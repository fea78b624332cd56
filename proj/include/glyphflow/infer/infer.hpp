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

#include "glyphflow/backbone/model.hpp"
#include "glyphflow/common/image.hpp"
#include "glyphflow/common/kv.hpp"
#include "glyphflow/corpus/corpus.hpp"
#include "glyphflow/layout/layout.hpp"

namespace gf::infer {

struct IntegratorConfig {
  int n_steps = 25;
  double t_start = 1.0;
  double t_end = 0.0;
  double guidance = 2.0;  // image stream, Stage 2 only
  std::uint64_t seed = 1;
  bool frozen_inpaint_noise = false;

  void validate() const;
  void write(KeyValues& kv) const;
  static IntegratorConfig read(const KeyValues& kv);
};

template <class T>
using VelocityField = std::function<std::vector<T>(std::span<const T> z, double t)>;
// Called after every Euler update with the state at the new time.
template <class T>
using StepHook = std::function<void(std::vector<T>& z, double t, int step)>;

// Explicit Euler on a uniform grid: z <- z - dt * v(z, t), dt = (t_start - t_end) / n.
template <class T>
std::vector<T> psi_integrate(std::span<const T> z1, int n_steps, double t_start, double t_end,
                             const VelocityField<T>& v, const StepHook<T>& after_step = {});

// v_uncond + w (v_cond - v_uncond)
template <class T>
std::vector<T> cfg_velocity(std::span<const T> v_cond, std::span<const T> v_uncond, double w);

// Every random tensor one sampling run needs, all derived from one seed.
struct NoiseBank {
  std::vector<float> x1;       // image stream start
  std::vector<float> b1;       // box stream start
  std::vector<float> box_unc;  // pinned box input of the unconditional branch
  std::vector<float> cond_unc;
  std::vector<float> c1;  // condition stream start, joint inpainting only
};
NoiseBank draw_noise(const backbone::ModelConfig& cfg, std::uint64_t seed);

struct GenerationResult {
  std::vector<int> prompt;  // the Stage-2 prompt
  layout::LayoutSpec layout;
  RgbImage planned;  // raw Stage-1 box map; empty in given-box mode
  RgbImage boxmap;   // codec rendering of `layout`, the Stage-2 input
  GrayImage condition;
  GrayImage target;
  bool predicted_boxes = false;
  bool decode_empty = false;
};

struct InpaintTask {
  GrayImage image;      // I_corr
  GrayImage mask;       // 1 = missing, 0 = known
  std::vector<int> prompt;
  const layout::LayoutSpec* layout = nullptr;  // known box/condition context, optional
};

struct InpaintResult {
  GrayImage image;
  RgbImage boxmap;
  std::vector<float> image_latent;  // final latent, before quantization
};

class Sampler {
 public:
  Sampler(const backbone::Model<float>& model, const corpus::GlyphAtlas& atlas);

  const backbone::ModelConfig& config() const { return model_.config(); }

  // Stage 1: box stream from noise with the image pinned at t=1 and a clean condition.
  RgbImage plan(std::span<const int> prompt, const GrayImage& condition,
                const IntegratorConfig& cfg) const;
  // Stage 2: image stream from x1 with box and condition rendered from the layout.
  GrayImage synthesize(std::span<const int> prompt, const layout::LayoutSpec& layout,
                       const IntegratorConfig& cfg) const;

  // Stage 1, decode, then Stage 2 prompted with the style and the placed glyphs.
  GenerationResult generate_cascaded(std::span<const int> prompt, const GrayImage& condition,
                                     const IntegratorConfig& cfg) const;
  GenerationResult generate_given_box(std::span<const int> prompt,
                                      const layout::LayoutSpec& layout,
                                      const IntegratorConfig& cfg) const;
  // Stage 2 from the session seed's x1 on the edited layout.
  GrayImage edit_regenerate(std::span<const int> prompt, const layout::LayoutSpec& edited,
                            const IntegratorConfig& cfg) const;
  InpaintResult inpaint(const InpaintTask& task, const IntegratorConfig& cfg) const;

  // Raw velocity for one set of stream states; exposed for forensics.
  backbone::Outputs<float> velocity(std::span<const int> prompt, std::span<const float> img,
                                    std::span<const float> box, std::span<const float> cond,
                                    const backbone::TimestepTriplet& t) const;

 private:
  const backbone::Model<float>& model_;
  const corpus::GlyphAtlas& atlas_;
  layout::Palette palette_;
};

// Prompt split into its style and glyph ids; checks the vocabulary.
struct ParsedPrompt {
  int style = 0;
  std::vector<int> glyphs;
};
ParsedPrompt parse_prompt(const corpus::GlyphAtlas& atlas, std::span<const int> prompt);
std::vector<int> make_prompt(const corpus::GlyphAtlas& atlas, int style, std::span<const int> glyphs);

// Intended-position layout for a prompt when no condition image is supplied:
// the corpus layout sampler keyed on the seed, glyphs in reading order.
layout::LayoutSpec scaffold_layout(const corpus::CorpusConfig& cfg,
                                   std::span<const int> glyphs, std::uint64_t seed);

// Boxes recovered from a Stage-1 box map. Glyphs come from the prompt in
// reading order; boxes with no glyph or an edge under the minimum are dropped.
layout::LayoutSpec decode_plan(const RgbImage& planned, std::span<const int> glyphs);

// Mean IoU after a greedy one-to-one matching of boxes carrying the same glyph,
// highest IoU first; unmatched boxes on either side count as 0.
double mean_matched_iou(const layout::LayoutSpec& truth, const layout::LayoutSpec& pred);

}  // namespace gf::infer
