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
#include "glyphflow/forensics/forensics.hpp"
#include "json.hpp"

using namespace gf::forensics;
using gf::GrayImage;
using gf::Rng;

namespace {

const ReconstructionField kOracle = [](std::span<const float> xt, double t,
                                       std::span<const float> eps) {
  // Invert x_t = (1 - t) x + t eps for x, then return eps - x.
  std::vector<float> v(xt.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float x = (xt[i] - float(t) * eps[i]) / float(1.0 - t);
    v[i] = eps[i] - x;
  }
  return v;
};

const ReconstructionField kZero = [](std::span<const float> xt, double, std::span<const float>) {
  return std::vector<float>(xt.size(), 0.0f);
};

bool code_of_invalid(auto&& fn) {
  try {
    fn();
  } catch (const gf::Error& e) {
    return e.code() == gf::Errc::kInvalidArgument;
  }
  return false;
}

}  // namespace

TEST_CASE("single-step reconstruction algebra") {
  std::vector<float> x(256);
  Rng fill(1);
  for (auto& v : x) v = float(fill.uniform(-1.0, 1.0));
  Rng rng(2);
  const auto rec = single_step_reconstruct(x, 0.4, kOracle, rng);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(rec[i] == doctest::Approx(x[i]).epsilon(1e-5));

  Rng a(9), b(9);
  CHECK(single_step_reconstruct(x, 0.3, kZero, a) == single_step_reconstruct(x, 0.3, kZero, b));

  // Zero velocity returns x_t; for x = 0 the error is t^2 eps^2, mean t^2.
  const std::vector<float> zeros(4096, 0.0f);
  for (double t : {0.2, 0.5, 0.8}) {
    double acc = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Rng r(100 + trial);
      for (float v : single_step_reconstruct(zeros, t, kZero, r)) acc += double(v) * v;
    }
    CHECK(std::abs(acc / (20.0 * zeros.size()) / (t * t) - 1.0) < 0.05);
  }
  CHECK(code_of_invalid([&] { single_step_reconstruct(x, 1.0, kZero, rng); }));
}

TEST_CASE("DRS aggregation") {
  std::vector<float> x(128, 0.25f);
  DRSConfig cfg;
  const DRSReport oracle = drs_score(x, kOracle, cfg);
  CHECK(oracle.score < 1e-10);
  REQUIRE(oracle.levels.size() == 9);
  for (const auto& l : oracle.levels) CHECK(l.trials.size() == 3);

  const std::vector<float> zeros(4096, 0.0f);
  DRSConfig one;
  one.levels = {0.3};
  one.weights = {1.0};
  one.trials = 8;
  CHECK(drs_score(zeros, kZero, one).score == doctest::Approx(0.09).epsilon(0.05));

  const DRSReport stub = drs_score(zeros, kZero, cfg);
  double weighted = 0.0;
  for (std::size_t k = 0; k < stub.levels.size(); ++k) {
    weighted += stub.levels[k].mean_error / 9.0;
    CHECK(stub.levels[k].mean_error >= 0.0);
    if (k) CHECK(stub.levels[k].mean_error > stub.levels[k - 1].mean_error);
  }
  CHECK(std::abs(stub.score - weighted) < 1e-9);
  CHECK(drs_score(zeros, kZero, cfg).score == stub.score);

  const auto j = nlohmann::json::parse(stub.to_json());
  CHECK(j["score"].get<double>() == doctest::Approx(stub.score));
  CHECK(j["levels"].size() == 9);
  CHECK(j["levels"][0]["t"].get<double>() == 0.1);
  CHECK(j["levels"][0]["trials"].size() == 3);
  const std::string csv = stub.curve_csv();
  CHECK(csv.rfind("t,mean_error\n0.1,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);

  DRSConfig bad;
  bad.levels = {0.0, 0.5};
  CHECK_THROWS_AS(drs_score(zeros, kZero, bad), gf::Error);
  bad.levels = {0.5};
  bad.weights = {1.0, 2.0};
  CHECK_THROWS_AS(drs_score(zeros, kZero, bad), gf::Error);
}

TEST_CASE("DRS config round-trips") {
  DRSConfig c;
  c.levels = {0.25, 0.75};
  c.weights = {0.4, 0.6};
  c.trials = 5;
  gf::KeyValues kv;
  c.write(kv);
  const DRSConfig back = DRSConfig::read(gf::KeyValues::parse(kv.str()));
  CHECK(back.levels == c.levels);
  CHECK(back.weights == c.weights);
  CHECK(back.trials == 5);
  gf::KeyValues def;
  DRSConfig{}.write(def);
  CHECK(def.get("weights") == "uniform");
  CHECK(DRSConfig::read(def).weights.empty());
}

TEST_CASE("blob painting matches a per-pixel oracle") {
  const GrayImage white(64, 64);
  Rng r0(4);
  BlobSpec none;
  none.count = 0;
  CHECK(add_blobs(white, none, r0) == white);

  BlobSpec spec;
  spec.count = kBlobsLow;
  spec.p_ink = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    const GrayImage out = add_blobs(white, spec, a);
    const auto blobs = sample_blobs(spec, 64, 64, b);
    REQUIRE(blobs.size() == 8);
    // Union of the ellipse interiors, tested pixel by pixel with the implicit
    // equation written out in the rotated frame.
    int expected = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        bool in = false;
        for (const auto& e : blobs) {
          const double px = x + 0.5 - e.cx, py = y + 0.5 - e.cy;
          const double u = px * std::cos(e.angle) + py * std::sin(e.angle);
          const double v = py * std::cos(e.angle) - px * std::sin(e.angle);
          in |= u * u / (e.a * e.a) + v * v / (e.b * e.b) <= 1.0;
        }
        expected += in;
      }
    const auto nonwhite = std::count_if(out.pixels.begin(), out.pixels.end(),
                                        [](std::uint8_t v) { return v != 255; });
    CHECK(nonwhite == expected);
    Rng c(seed);
    CHECK(add_blobs(white, spec, c) == out);
  }

  // A single centered disc of radius 6 covers close to pi * 36 pixels.
  GrayImage img(64, 64);
  paint(img, Ellipse{32, 32, 6, 6, 0.3, true});
  const auto n = std::count(img.pixels.begin(), img.pixels.end(), 0);
  CHECK(std::abs(double(n) - 3.14159265 * 36) < 8);

  BlobSpec bad;
  bad.axis_min = 0;
  Rng r1(1);
  CHECK_THROWS_AS(add_blobs(white, bad, r1), gf::Error);
}

TEST_CASE("model-backed scoring records the box source") {
  const auto atlas = gf::corpus::GlyphAtlas::procedural();
  gf::backbone::ModelConfig mc;
  mc.d_model = 32;
  mc.n_heads = 2;
  mc.n_blocks = 2;
  mc.canvas = 16;
  const gf::backbone::Model<float> model(mc, gf::backbone::Init::kRandom, 5);
  gf::corpus::CorpusConfig cc;
  cc.canvas = 16;
  cc.font_size = 6;
  cc.k_min = 1;
  cc.k_max = 2;
  const auto t = gf::corpus::generate_triplet(atlas, cc, 0);
  const gf::infer::Sampler sampler(model, atlas);
  DRSConfig cfg;
  cfg.levels = {0.2, 0.6};
  gf::infer::IntegratorConfig ic;
  ic.n_steps = 4;
  const DRSReport given = score_image(sampler, atlas, t.target, t.prompt, &t.layout, cfg, ic);
  CHECK(given.boxes == "given");
  CHECK(given.score > 0.0);
  CHECK(score_image(sampler, atlas, t.target, t.prompt, &t.layout, cfg, ic).score == given.score);
  const DRSReport planned = score_image(sampler, atlas, t.target, t.prompt, nullptr, cfg, ic);
  CHECK(planned.boxes == "predicted");
  CHECK(nlohmann::json::parse(planned.to_json())["boxes"] == "predicted");
  CHECK_THROWS_AS(score_image(sampler, atlas, GrayImage(8, 8), t.prompt, nullptr, cfg, ic), gf::Error);
}
