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

#include "glyphflow/forensics/forensics.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>

#include "glyphflow/common/error.hpp"
#include "glyphflow/corpus/corpus.hpp"
#include "glyphflow/flow/flow.hpp"
#include "json.hpp"

namespace gf::forensics {

void DRSConfig::validate() const {
  require(!levels.empty(), Errc::kConfigError, "DRS needs at least one noise level");
  for (double t : levels)
    require(t > 0.0 && t < 1.0, Errc::kConfigError, "DRS noise levels must lie in (0, 1)");
  require(weights.empty() || weights.size() == levels.size(), Errc::kConfigError,
          "DRS weights must match the number of levels");
  for (double w : weights) require(w >= 0.0, Errc::kConfigError, "DRS weights must be nonnegative");
  require(trials >= 1, Errc::kConfigError, "DRS trials must be at least 1");
}

double DRSConfig::weight(std::size_t k) const {
  return weights.empty() ? 1.0 / static_cast<double>(levels.size()) : weights[k];
}

namespace {

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

}  // namespace

void DRSConfig::write(KeyValues& kv) const {
  kv.set("levels", join(levels));
  kv.set("weights", weights.empty() ? std::string("uniform") : join(weights));
  kv.set("trials", trials);
  kv.set("seed", seed);
}

DRSConfig DRSConfig::read(const KeyValues& kv) {
  DRSConfig c;
  if (kv.has("levels")) c.levels = kv.get_doubles("levels");
  if (kv.has("weights"))
    c.weights = kv.get("weights") == "uniform" ? std::vector<double>{} : kv.get_doubles("weights");
  if (kv.has("trials")) c.trials = static_cast<int>(kv.get_int("trials"));
  if (kv.has("seed")) c.seed = kv.get_u64("seed");
  c.validate();
  return c;
}

std::string DRSReport::to_json() const {
  nlohmann::ordered_json j;
  j["score"] = score;
  if (!boxes.empty()) j["boxes"] = boxes;
  j["levels"] = nlohmann::ordered_json::array();
  for (const auto& l : levels)
    j["levels"].push_back({{"t", l.t}, {"mean_error", l.mean_error}, {"trials", l.trials}});
  return j.dump(2);
}

std::string DRSReport::curve_csv() const {
  std::string out = "t,mean_error\n";
  char buf[96];
  for (const auto& l : levels) {
    std::snprintf(buf, sizeof buf, "%.6g,%.9g\n", l.t, l.mean_error);
    out += buf;
  }
  return out;
}

std::vector<float> single_step_reconstruct(std::span<const float> x_query, double t,
                                           const ReconstructionField& v, Rng& rng) {
  require(t > 0.0 && t < 1.0, Errc::kInvalidArgument, "reconstruction level outside (0, 1)");
  const std::vector<float> eps = flow::gaussian(x_query.size(), rng);
  const std::vector<float> xt = flow::interpolate<float>(x_query, eps, t);
  const std::vector<float> vel = v(xt, t, eps);
  require(vel.size() == xt.size(), Errc::kShapeMismatch, "velocity has the wrong size");
  std::vector<float> out(xt.size());
  const float tf = static_cast<float>(t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xt[i] - tf * vel[i];
  return out;
}

DRSReport drs_score(std::span<const float> x_query, const ReconstructionField& v,
                    const DRSConfig& cfg) {
  cfg.validate();
  require(!x_query.empty(), Errc::kInvalidArgument, "empty query");
  DRSReport r;
  for (std::size_t k = 0; k < cfg.levels.size(); ++k) {
    DRSLevel level;
    level.t = cfg.levels[k];
    for (int trial = 0; trial < cfg.trials; ++trial) {
      Rng rng = Rng::keyed(cfg.seed, {k, static_cast<std::uint64_t>(trial)});
      const auto x0 = single_step_reconstruct(x_query, level.t, v, rng);
      double e = 0.0;
      for (std::size_t i = 0; i < x0.size(); ++i) {
        const double d = double(x_query[i]) - double(x0[i]);
        e += d * d;
      }
      level.trials.push_back(e / static_cast<double>(x0.size()));
    }
    double sum = 0.0;
    for (double e : level.trials) sum += e;
    level.mean_error = sum / cfg.trials;
    r.score += cfg.weight(k) * level.mean_error;
    r.levels.push_back(std::move(level));
  }
  return r;
}

ReconstructionField model_field(const infer::Sampler& sampler, const corpus::GlyphAtlas& atlas,
                                std::span<const int> prompt, const layout::LayoutSpec& layout) {
  const auto& mc = sampler.config();
  auto b0 = std::make_shared<std::vector<float>>(
      flow::encode_rgb(layout::render_box_map(layout, layout::Palette()), mc));
  auto c0 = std::make_shared<std::vector<float>>(
      flow::encode_gray(corpus::render_condition(atlas, layout), mc));
  std::vector<int> p(prompt.begin(), prompt.end());
  return [&sampler, b0, c0, p](std::span<const float> xt, double t, std::span<const float>) {
    return sampler.velocity(p, xt, *b0, *c0, {t, 0.0, 0.0}).img;
  };
}

DRSReport score_image(const infer::Sampler& sampler, const corpus::GlyphAtlas& atlas,
                      const GrayImage& image, std::span<const int> prompt,
                      const layout::LayoutSpec* boxes, const DRSConfig& cfg,
                      const infer::IntegratorConfig& plan_cfg) {
  const auto& mc = sampler.config();
  require(image.width == mc.canvas && image.height == mc.canvas, Errc::kDimensionMismatch,
          "image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
              ", model canvas is " + std::to_string(mc.canvas));
  const infer::ParsedPrompt pp = infer::parse_prompt(atlas, prompt);
  layout::LayoutSpec l;
  if (boxes) {
    layout::validate(*boxes);
    l = *boxes;
  } else {
    const RgbImage planned = sampler.plan(prompt, image, plan_cfg);
    l = infer::decode_plan(planned, pp.glyphs);
  }
  const auto x = flow::encode_gray(image, mc);
  DRSReport r = drs_score(x, model_field(sampler, atlas, prompt, l), cfg);
  r.boxes = boxes ? "given" : "predicted";
  return r;
}

// ---- blobs ---------------------------------------------------------------------------

void BlobSpec::validate() const {
  require(count >= 0, Errc::kConfigError, "blob count must be nonnegative");
  require(axis_min > 0.0 && axis_max >= axis_min, Errc::kConfigError, "bad blob axis range");
  require(p_ink >= 0.0 && p_ink <= 1.0, Errc::kConfigError, "p_ink outside [0, 1]");
}

bool Ellipse::covers(int x, int y) const {
  const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
  return u * u + v * v <= 1.0;
}

std::vector<Ellipse> sample_blobs(const BlobSpec& spec, int width, int height, Rng& rng) {
  spec.validate();
  std::vector<Ellipse> out;
  for (int i = 0; i < spec.count; ++i) {
    Ellipse e;
    e.cx = rng.uniform(0.0, width);
    e.cy = rng.uniform(0.0, height);
    e.a = rng.uniform(spec.axis_min, spec.axis_max);
    e.b = rng.uniform(spec.axis_min, spec.axis_max);
    e.angle = rng.uniform(0.0, std::numbers::pi);
    e.ink = rng.bernoulli(spec.p_ink);
    out.push_back(e);
  }
  return out;
}

void paint(GrayImage& image, const Ellipse& e) {
  const double r = std::max(e.a, e.b);
  const int x0 = std::max(0, int(std::floor(e.cx - r))), x1 = std::min(image.width - 1, int(std::ceil(e.cx + r)));
  const int y0 = std::max(0, int(std::floor(e.cy - r))), y1 = std::min(image.height - 1, int(std::ceil(e.cy + r)));
  const std::uint8_t v = e.ink ? kBlack : kWhite;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (e.covers(x, y)) image.at(x, y) = v;
}

GrayImage add_blobs(const GrayImage& image, const BlobSpec& spec, Rng& rng) {
  GrayImage out = image;
  for (const Ellipse& e : sample_blobs(spec, image.width, image.height, rng)) paint(out, e);
  return out;
}

}  // namespace gf::forensics
