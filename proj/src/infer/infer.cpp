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

#include "glyphflow/infer/infer.hpp"

#include <algorithm>
#include <cmath>

#include "glyphflow/common/error.hpp"
#include "glyphflow/common/rng.hpp"
#include "glyphflow/flow/flow.hpp"
#include "glyphflow/sequence/sequence.hpp"

namespace gf::infer {

using backbone::TimestepTriplet;

void IntegratorConfig::validate() const {
  require(n_steps >= 1, Errc::kConfigError, "n_steps must be at least 1");
  require(t_start >= 0.0 && t_start <= 1.0 && t_end >= 0.0 && t_end <= 1.0, Errc::kConfigError,
          "integration bounds must lie in [0, 1]");
  require(guidance >= 0.0, Errc::kConfigError, "guidance must be nonnegative");
}

void IntegratorConfig::write(KeyValues& kv) const {
  kv.set("n_steps", n_steps);
  kv.set("t_start", t_start);
  kv.set("t_end", t_end);
  kv.set("guidance", guidance);
  kv.set("seed", seed);
  kv.set("frozen_inpaint_noise", std::string(frozen_inpaint_noise ? "true" : "false"));
}

IntegratorConfig IntegratorConfig::read(const KeyValues& kv) {
  IntegratorConfig c;
  if (kv.has("n_steps")) c.n_steps = static_cast<int>(kv.get_int("n_steps"));
  if (kv.has("t_start")) c.t_start = kv.get_double("t_start");
  if (kv.has("t_end")) c.t_end = kv.get_double("t_end");
  if (kv.has("guidance")) c.guidance = kv.get_double("guidance");
  if (kv.has("seed")) c.seed = kv.get_u64("seed");
  if (kv.has("frozen_inpaint_noise")) {
    const std::string& v = kv.get("frozen_inpaint_noise");
    require(v == "true" || v == "false", Errc::kConfigError,
            "frozen_inpaint_noise: expected true or false, got '" + v + "'");
    c.frozen_inpaint_noise = v == "true";
  }
  c.validate();
  return c;
}

template <class T>
std::vector<T> psi_integrate(std::span<const T> z1, int n_steps, double t_start, double t_end,
                             const VelocityField<T>& v, const StepHook<T>& after_step) {
  require(n_steps >= 1, Errc::kInvalidArgument, "n_steps must be at least 1");
  std::vector<T> z(z1.begin(), z1.end());
  for (int i = 0; i < n_steps; ++i) {
    const double t = t_start + (t_end - t_start) * i / n_steps;
    const double t_next = t_start + (t_end - t_start) * (i + 1) / n_steps;
    const std::vector<T> vel = v(z, t);
    require(vel.size() == z.size(), Errc::kShapeMismatch, "velocity field changed the state size");
    const T dt = static_cast<T>(t - t_next);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] -= dt * vel[j];
    if (after_step) after_step(z, t_next, i);
    for (T x : z)
      require(std::isfinite(static_cast<double>(x)), Errc::kNonFiniteState,
              "state became non-finite at step " + std::to_string(i + 1) + " (t=" +
                  std::to_string(t_next) + ")");
  }
  return z;
}

template <class T>
std::vector<T> cfg_velocity(std::span<const T> v_cond, std::span<const T> v_uncond, double w) {
  require(v_cond.size() == v_uncond.size(), Errc::kShapeMismatch, "guidance: shape mismatch");
  require(w >= 0.0, Errc::kInvalidArgument, "guidance scale must be nonnegative");
  std::vector<T> out(v_cond.size());
  const T wt = static_cast<T>(w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v_uncond[i] + wt * (v_cond[i] - v_uncond[i]);
  return out;
}

NoiseBank draw_noise(const backbone::ModelConfig& cfg, std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(cfg.n_patches());
  auto stream = [&](std::uint64_t id, int dim) {
    Rng rng = Rng::keyed(seed, {0x6e6f697365ULL, id});
    return flow::gaussian(n * static_cast<std::size_t>(dim), rng);
  };
  NoiseBank b;
  b.x1 = stream(1, cfg.gray_dim());
  b.b1 = stream(2, cfg.box_dim());
  b.box_unc = stream(3, cfg.box_dim());
  b.cond_unc = stream(4, cfg.gray_dim());
  b.c1 = stream(5, cfg.gray_dim());
  return b;
}

// ---- prompts and layouts -------------------------------------------------------------

ParsedPrompt parse_prompt(const corpus::GlyphAtlas& atlas, std::span<const int> prompt) {
  require(!prompt.empty(), Errc::kInvalidArgument, "prompt is empty");
  require(atlas.is_style_token(prompt[0]), Errc::kUnknownGlyph,
          "prompt[0]: expected a style token, got " + std::to_string(prompt[0]));
  ParsedPrompt p;
  p.style = prompt[0] - atlas.glyph_count();
  for (std::size_t i = 1; i < prompt.size(); ++i) {
    require(prompt[i] >= 0 && prompt[i] < atlas.glyph_count(), Errc::kUnknownGlyph,
            "prompt[" + std::to_string(i) + "]: unknown glyph id " + std::to_string(prompt[i]));
    p.glyphs.push_back(prompt[i]);
  }
  return p;
}

std::vector<int> make_prompt(const corpus::GlyphAtlas& atlas, int style,
                             std::span<const int> glyphs) {
  require(style >= 0 && style < atlas.style_count(), Errc::kUnknownGlyph,
          "unknown style id " + std::to_string(style));
  std::vector<int> out{atlas.style_token(style)};
  for (std::size_t i = 0; i < glyphs.size(); ++i) {
    require(glyphs[i] >= 0 && glyphs[i] < atlas.glyph_count(), Errc::kUnknownGlyph,
            "glyph " + std::to_string(i) + ": unknown glyph id " + std::to_string(glyphs[i]));
    out.push_back(glyphs[i]);
  }
  return out;
}

layout::LayoutSpec scaffold_layout(const corpus::CorpusConfig& cfg, std::span<const int> glyphs,
                                   std::uint64_t seed) {
  Rng rng = Rng::keyed(seed, {0x7363616666ULL});
  layout::LayoutSpec l =
      corpus::sample_layout(cfg, corpus::LayoutMode::kGrid, static_cast<int>(glyphs.size()), rng);
  for (std::size_t i = 0; i < l.boxes.size(); ++i) l.boxes[i].glyph = glyphs[i];
  return l;
}

layout::LayoutSpec decode_plan(const RgbImage& planned, std::span<const int> glyphs) {
  layout::LayoutSpec l = layout::decode_box_map(planned, layout::Palette(), glyphs);
  std::erase_if(l.boxes, [&](const layout::CharBox& b) {
    return b.order >= static_cast<int>(glyphs.size()) || b.w < layout::kMinBoxEdge ||
           b.h < layout::kMinBoxEdge;
  });
  layout::renumber(l);
  return l;
}

double mean_matched_iou(const layout::LayoutSpec& truth, const layout::LayoutSpec& pred) {
  const std::size_t n = std::max(truth.boxes.size(), pred.boxes.size());
  if (n == 0) return 1.0;
  struct Pair {
    double iou;
    std::size_t t, p;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < truth.boxes.size(); ++i)
    for (std::size_t j = 0; j < pred.boxes.size(); ++j)
      if (truth.boxes[i].glyph == pred.boxes[j].glyph)
        pairs.push_back({layout::iou(truth.boxes[i], pred.boxes[j]), i, j});
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::vector<bool> used_t(truth.boxes.size()), used_p(pred.boxes.size());
  double acc = 0.0;
  for (const Pair& pr : pairs) {
    if (used_t[pr.t] || used_p[pr.p]) continue;
    used_t[pr.t] = used_p[pr.p] = true;
    acc += pr.iou;
  }
  return acc / static_cast<double>(n);
}

// ---- sampler -------------------------------------------------------------------------

Sampler::Sampler(const backbone::Model<float>& model, const corpus::GlyphAtlas& atlas)
    : model_(model), atlas_(atlas) {
  require(atlas.vocab_size() == model.config().vocab, Errc::kConfigMismatch,
          "atlas vocabulary " + std::to_string(atlas.vocab_size()) + " != model vocabulary " +
              std::to_string(model.config().vocab));
}

backbone::Outputs<float> Sampler::velocity(std::span<const int> prompt, std::span<const float> img,
                                           std::span<const float> box, std::span<const float> cond,
                                           const TimestepTriplet& t) const {
  backbone::Inputs<float> in{prompt, img, box, cond, t};
  return model_.forward(in);
}

RgbImage Sampler::plan(std::span<const int> prompt, const GrayImage& condition,
                       const IntegratorConfig& cfg) const {
  cfg.validate();
  parse_prompt(atlas_, prompt);
  const auto& mc = model_.config();
  const NoiseBank noise = draw_noise(mc, cfg.seed);
  const std::vector<float> c0 = flow::encode_gray(condition, mc);
  VelocityField<float> field = [&](std::span<const float> z, double t) {
    return velocity(prompt, noise.x1, z, c0, {1.0, t, 0.0}).box;
  };
  const auto b0 = psi_integrate<float>(noise.b1, cfg.n_steps, cfg.t_start, cfg.t_end, field);
  return flow::decode_rgb(b0, mc);
}

GrayImage Sampler::synthesize(std::span<const int> prompt, const layout::LayoutSpec& layout,
                              const IntegratorConfig& cfg) const {
  cfg.validate();
  parse_prompt(atlas_, prompt);
  const auto& mc = model_.config();
  require(layout.canvas == mc.canvas, Errc::kShapeMismatch,
          "layout canvas " + std::to_string(layout.canvas) + " != model canvas " +
              std::to_string(mc.canvas));
  const NoiseBank noise = draw_noise(mc, cfg.seed);
  const auto b0 = flow::encode_rgb(layout::render_box_map(layout, palette_), mc);
  const auto c0 = flow::encode_gray(corpus::render_condition(atlas_, layout), mc);
  const std::vector<int> null_prompt{atlas_.null_token()};
  VelocityField<float> field = [&](std::span<const float> z, double t) {
    auto v = velocity(prompt, z, b0, c0, {t, 0.0, 0.0}).img;
    if (cfg.guidance == 1.0) return v;
    const auto vu = velocity(null_prompt, z, noise.box_unc, noise.cond_unc, {t, 1.0, 1.0}).img;
    return cfg_velocity<float>(v, vu, cfg.guidance);
  };
  const auto x0 = psi_integrate<float>(noise.x1, cfg.n_steps, cfg.t_start, cfg.t_end, field);
  return flow::decode_gray(x0, mc);
}

GenerationResult Sampler::generate_given_box(std::span<const int> prompt,
                                             const layout::LayoutSpec& layout,
                                             const IntegratorConfig& cfg) const {
  layout::validate(layout, palette_.size());
  GenerationResult r;
  r.prompt.assign(prompt.begin(), prompt.end());
  r.layout = layout;
  r.boxmap = layout::render_box_map(layout, palette_);
  r.condition = corpus::render_condition(atlas_, layout);
  r.target = synthesize(prompt, layout, cfg);
  return r;
}

GenerationResult Sampler::generate_cascaded(std::span<const int> prompt,
                                            const GrayImage& condition,
                                            const IntegratorConfig& cfg) const {
  const ParsedPrompt p = parse_prompt(atlas_, prompt);
  RgbImage planned = plan(prompt, condition, cfg);
  const layout::LayoutSpec l = decode_plan(planned, p.glyphs);
  // Stage 2 reads the glyphs actually placed, so re-submitting this layout as
  // an edit reproduces the image even when planning lost a box.
  std::vector<int> placed;
  for (const auto& b : l.boxes) placed.push_back(b.glyph);
  GenerationResult r = generate_given_box(make_prompt(atlas_, p.style, placed), l, cfg);
  r.planned = std::move(planned);
  r.predicted_boxes = true;
  r.decode_empty = l.boxes.empty();
  return r;
}

GrayImage Sampler::edit_regenerate(std::span<const int> prompt, const layout::LayoutSpec& edited,
                                   const IntegratorConfig& cfg) const {
  layout::validate(edited, palette_.size());
  return synthesize(prompt, edited, cfg);
}

InpaintResult Sampler::inpaint(const InpaintTask& task, const IntegratorConfig& cfg) const {
  cfg.validate();
  parse_prompt(atlas_, task.prompt);
  const auto& mc = model_.config();
  require(task.image.width == mc.canvas && task.image.height == mc.canvas, Errc::kDimensionMismatch,
          "image is " + std::to_string(task.image.width) + "x" + std::to_string(task.image.height) +
              ", model canvas is " + std::to_string(mc.canvas));
  require(task.mask.width == task.image.width && task.mask.height == task.image.height,
          Errc::kDimensionMismatch, "mask dimensions differ from the image");
  for (std::uint8_t m : task.mask.pixels)
    require(m == 0 || m == 255, Errc::kInvalidArgument, "mask is not binary (expected 0 or 255)");
  if (task.layout) layout::validate(*task.layout, palette_.size());

  const sequence::PatchGrid gray_grid{mc.canvas, mc.patch, 1}, rgb_grid{mc.canvas, mc.patch, 3};
  std::vector<float> mplane(task.mask.pixels.size());
  for (std::size_t i = 0; i < mplane.size(); ++i) mplane[i] = task.mask.pixels[i] ? 1.0f : 0.0f;
  std::vector<float> mplane3;
  for (int c = 0; c < 3; ++c) mplane3.insert(mplane3.end(), mplane.begin(), mplane.end());

  // State is [image | box | condition]; each part has a clean reference and a mask.
  const std::size_t ni = std::size_t(mc.n_patches()) * mc.gray_dim();
  const std::size_t nb = std::size_t(mc.n_patches()) * mc.box_dim();
  std::vector<float> z0 = flow::encode_gray(task.image, mc);
  std::vector<float> mask = sequence::patchify<float>(mplane, gray_grid);
  if (task.layout) {
    const auto b0 = flow::encode_rgb(layout::render_box_map(*task.layout, palette_), mc);
    const auto c0 = flow::encode_gray(corpus::render_condition(atlas_, *task.layout), mc);
    const auto bm = sequence::patchify<float>(mplane3, rgb_grid);
    z0.insert(z0.end(), b0.begin(), b0.end());
    mask.insert(mask.end(), bm.begin(), bm.end());
    z0.insert(z0.end(), c0.begin(), c0.end());
    mask.insert(mask.end(), ni, 0.0f);  // condition fully known
  } else {
    z0.insert(z0.end(), nb + ni, 0.0f);
    mask.insert(mask.end(), nb + ni, 1.0f);  // no box or condition context: generate both
  }

  const NoiseBank noise = draw_noise(mc, cfg.seed);
  std::vector<float> z1 = noise.x1;
  z1.insert(z1.end(), noise.b1.begin(), noise.b1.end());
  z1.insert(z1.end(), noise.c1.begin(), noise.c1.end());

  auto replace = [&](std::vector<float>& z, double t, std::uint64_t step) {
    std::vector<float> eps;
    if (cfg.frozen_inpaint_noise) {
      eps = z1;
    } else {
      Rng rng = Rng::keyed(cfg.seed, {0x696e70ULL, step});
      eps = flow::gaussian(z.size(), rng);
    }
    const float a = static_cast<float>(1.0 - t), b = static_cast<float>(t);
    for (std::size_t i = 0; i < z.size(); ++i)
      if (mask[i] == 0.0f) z[i] = a * z0[i] + b * eps[i];
  };
  replace(z1, cfg.t_start, 0);

  VelocityField<float> field = [&](std::span<const float> z, double t) {
    const auto out = velocity(task.prompt, z.subspan(0, ni), z.subspan(ni, nb), z.subspan(ni + nb, ni),
                              {t, t, t});
    std::vector<float> v = out.img;
    v.insert(v.end(), out.box.begin(), out.box.end());
    v.insert(v.end(), out.cond.begin(), out.cond.end());
    return v;
  };
  StepHook<float> hook = [&](std::vector<float>& z, double t, int step) {
    replace(z, t, static_cast<std::uint64_t>(step) + 1);
  };
  const auto z = psi_integrate<float>(z1, cfg.n_steps, cfg.t_start, cfg.t_end, field, hook);

  InpaintResult r;
  r.image_latent.assign(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(ni));
  r.image = flow::decode_gray(r.image_latent, mc);
  r.boxmap = flow::decode_rgb(std::span<const float>(z).subspan(ni, nb), mc);
  return r;
}

template std::vector<float> psi_integrate<float>(std::span<const float>, int, double, double,
                                                 const VelocityField<float>&,
                                                 const StepHook<float>&);
template std::vector<double> psi_integrate<double>(std::span<const double>, int, double, double,
                                                   const VelocityField<double>&,
                                                   const StepHook<double>&);
template std::vector<float> cfg_velocity<float>(std::span<const float>, std::span<const float>,
                                                double);
template std::vector<double> cfg_velocity<double>(std::span<const double>, std::span<const double>,
                                                  double);

}  // namespace gf::infer
