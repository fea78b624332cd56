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
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "glyphflow/common/error.hpp"
#include "glyphflow/common/rng.hpp"
#include "glyphflow/flow/flow.hpp"

using namespace gf::flow;
using gf::Rng;
using gf::backbone::Init;
using gf::backbone::Model;
using gf::backbone::ModelConfig;

namespace {

gf::Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const gf::Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return gf::Errc::kInvalidArgument;
}

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_blocks = 2;
  c.canvas = 16;
  return c;
}

std::vector<gf::corpus::Triplet> make_pool(const gf::corpus::GlyphAtlas& atlas, int canvas,
                                           int count, std::uint64_t seed) {
  gf::corpus::CorpusConfig cc;
  cc.canvas = canvas;
  cc.seed = seed;
  if (canvas < 64) {
    cc.font_size = 6;
    cc.k_min = 1;
    cc.k_max = 2;
  }
  return gf::corpus::generate_corpus(atlas, cc, count, 1);
}

Outputs<double> filled(std::size_t n, double v) {
  return {std::vector<double>(n, v), std::vector<double>(n, v), std::vector<double>(n, v)};
}

}  // namespace

TEST_CASE("interpolation endpoints and the velocity identity") {
  Rng rng(3);
  std::vector<double> x0(64), eps(64);
  for (auto& v : x0) v = rng.normal();
  for (auto& v : eps) v = rng.normal();
  CHECK(interpolate<double>(x0, eps, 0.0) == x0);
  CHECK(interpolate<double>(x0, eps, 1.0) == eps);
  const std::vector<double> zeros(16, 0.0), ones(16, 1.0);
  for (double v : interpolate<double>(zeros, ones, 0.25)) CHECK(v == 0.25);
  for (double v : velocity_target<double>(ones, zeros)) CHECK(v == -1.0);
  for (double v : velocity_target<double>(x0, x0)) CHECK(v == 0.0);

  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> a(32), b(32);
    for (auto& v : a) v = static_cast<float>(rng.normal());
    for (auto& v : b) v = static_cast<float>(rng.normal());
    const double t = rng.uniform();
    const auto xt = interpolate<float>(a, b, t);
    const auto u = velocity_target<float>(a, b);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(std::abs(xt[i] - t * u[i] - a[i]) < 1e-6);
  }
  const std::vector<double> short_v(3);
  CHECK(code_of([&] { interpolate<double>(x0, short_v, 0.5); }) == gf::Errc::kShapeMismatch);
  CHECK(code_of([&] { velocity_target<double>(x0, short_v); }) == gf::Errc::kShapeMismatch);
}

TEST_CASE("logit-normal timestep statistics") {
  CHECK(sigmoid(0.0) == 0.5);
  Rng rng(11);
  const int n = 100000;
  std::vector<double> ts(n);
  int band = 0;
  for (auto& t : ts) {
    t = sample_t_logitnormal(rng);
    REQUIRE(t > 0.0);
    REQUIRE(t < 1.0);
    band += (t > 0.25 && t < 0.75);
  }
  std::nth_element(ts.begin(), ts.begin() + n / 2, ts.end());
  CHECK(std::abs(ts[n / 2] - 0.5) < 0.01);
  // sigmoid(z) in (1/4, 3/4) iff |z| < ln 3.
  const double expected = std::erf(std::log(3.0) / std::sqrt(2.0));
  CHECK(std::abs(expected - 0.728) < 0.001);
  CHECK(std::abs(double(band) / n - expected) < 0.01);
}

TEST_CASE("regime pinning rules") {
  Rng rng(5);
  RegimeProbs only_s1{1, 0, 0, 0};
  for (int i = 0; i < 1000; ++i) {
    const RegimeDraw d = sample_regime(only_s1, 0.1, rng);
    REQUIRE(d.regime == Regime::kS1);
    CHECK(d.t.img == 1.0);
    CHECK(d.t.cond == 0.0);
  }
  RegimeProbs only_joint{0, 0, 1, 0};
  for (int i = 0; i < 1000; ++i) {
    const RegimeDraw d = sample_regime(only_joint, 0.1, rng);
    REQUIRE(d.regime == Regime::kJoint);
    CHECK(d.t.img == d.t.box);
    CHECK(d.t.box == d.t.cond);
  }
  RegimeProbs paper;
  for (int i = 0; i < 20000; ++i) {
    const RegimeDraw d = sample_regime(paper, 0.1, rng);
    switch (d.regime) {
      case Regime::kS1:
        CHECK((d.t.img == 1.0 && d.t.cond == 0.0 && d.t.box > 0.0 && d.t.box < 1.0));
        break;
      case Regime::kS2:
        CHECK((d.t.box == 0.0 && d.t.cond == 0.0 && d.t.img > 0.0 && d.t.img < 1.0));
        CHECK((d.delta >= 0.0 && d.delta < 0.1));
        break;
      case Regime::kJoint:
        CHECK((d.t.img == d.t.box && d.t.box == d.t.cond));
        break;
      case Regime::kUncond:
        CHECK((d.t.box == 1.0 && d.t.cond == 1.0 && d.t.img > 0.0 && d.t.img < 1.0));
        break;
    }
    if (d.regime != Regime::kS2) CHECK(d.delta == 0.0);
  }
  CHECK(code_of([] { RegimeProbs{0.5, 0.5, 0.5, 0}.validate(); }) == gf::Errc::kConfigError);
  CHECK(code_of([] { RegimeProbs{1.1, -0.1, 0, 0}.validate(); }) == gf::Errc::kConfigError);
}

TEST_CASE("regime frequencies at the training probabilities") {
  Rng rng(17);
  RegimeProbs p;
  const int n = 100000;
  std::array<int, kRegimeCount> counts{};
  for (int i = 0; i < n; ++i) ++counts[static_cast<int>(sample_regime(p, 0.1, rng).regime)];
  const std::array<double, kRegimeCount> nominal{0.35, 0.35, 0.25, 0.05};
  double chi2 = 0.0;
  for (int r = 0; r < kRegimeCount; ++r) {
    CHECK(std::abs(double(counts[r]) / n - nominal[r]) < 0.01);
    const double e = nominal[r] * n;
    chi2 += (counts[r] - e) * (counts[r] - e) / e;
  }
  // Upper 0.001 quantile of chi-square with 3 degrees of freedom.
  CHECK(chi2 < 16.266);
}

TEST_CASE("box perturbation energy") {
  Rng rng(23);
  const std::vector<double> b0(256, 0.0);
  CHECK(perturb_box_latent<double>(b0, 0.0, rng) == b0);
  std::vector<double> ones(256, 1.0);
  Rng r1(4), r2(4);
  const auto pure = perturb_box_latent<double>(ones, 1.0, r1);
  for (double v : pure) CHECK(v == r2.normal());

  for (double delta : {0.05, 0.1, 0.5}) {
    double acc = 0.0;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i)
      for (double v : perturb_box_latent<double>(b0, delta, rng)) acc += v * v;
    const double expected = delta * delta * double(b0.size());
    CHECK(std::abs(acc / draws / expected - 1.0) < 0.03);
  }
  CHECK(code_of([&] { perturb_box_latent<double>(b0, 1.5, rng); }) == gf::Errc::kInvalidArgument);
}

TEST_CASE("loss assembly per regime") {
  const auto zero = filled(8, 0.0);
  CHECK(compute_loss(zero, zero, Regime::kJoint, 0.01).total == 0.0);

  // Stream errors chosen so each MSE is a known constant.
  Outputs<double> pred{std::vector<double>(4, std::sqrt(0.2)), std::vector<double>(12, std::sqrt(0.3)),
                       std::vector<double>(4, std::sqrt(0.5))};
  Outputs<double> tgt{std::vector<double>(4, 0.0), std::vector<double>(12, 0.0),
                      std::vector<double>(4, 0.0)};
  const LossRecord j = compute_loss(pred, tgt, Regime::kJoint, 0.01);
  CHECK(j.img == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(j.box == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(j.cond == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(j.total == doctest::Approx(1.0).epsilon(1e-12));

  const LossRecord s1 = compute_loss(pred, tgt, Regime::kS1, 0.0);
  CHECK(s1.total == s1.box);
  const double lam = 0.01;
  CHECK(compute_loss(pred, tgt, Regime::kS1, lam).total == j.box + lam * (j.img + j.cond));
  CHECK(compute_loss(pred, tgt, Regime::kS2, lam).total == j.img + lam * (j.box + j.cond));
  CHECK(compute_loss(pred, tgt, Regime::kUncond, lam).total == j.img + lam * (j.box + j.cond));

  Outputs<double> bad = tgt;
  bad.box.resize(3);
  CHECK(code_of([&] { compute_loss(pred, bad, Regime::kJoint, lam); }) == gf::Errc::kShapeMismatch);
}

TEST_CASE("loss gradient matches finite differences") {
  Rng rng(8);
  Outputs<double> pred{std::vector<double>(5), std::vector<double>(9), std::vector<double>(5)};
  Outputs<double> tgt = pred;
  for (auto* v : {&pred.img, &pred.box, &pred.cond, &tgt.img, &tgt.box, &tgt.cond})
    for (auto& x : *v) x = rng.normal();
  for (Regime r : {Regime::kS1, Regime::kS2, Regime::kJoint, Regime::kUncond}) {
    Outputs<double> g;
    compute_loss(pred, tgt, r, 0.01, &g, 0.5);
    for (auto [pv, gv] : {std::pair{&pred.img, &g.img}, {&pred.box, &g.box}, {&pred.cond, &g.cond}})
      for (std::size_t i = 0; i < pv->size(); ++i) {
        const double keep = (*pv)[i], h = 1e-6;
        (*pv)[i] = keep + h;
        const double up = compute_loss(pred, tgt, r, 0.01).total;
        (*pv)[i] = keep - h;
        const double dn = compute_loss(pred, tgt, r, 0.01).total;
        (*pv)[i] = keep;
        CHECK((*gv)[i] == doctest::Approx(0.5 * (up - dn) / (2 * h)).epsilon(1e-6));
      }
  }
}

TEST_CASE("latent encoding round trips") {
  const auto atlas = gf::corpus::GlyphAtlas::procedural();
  const auto pool = make_pool(atlas, 64, 1, 2);
  const ModelConfig cfg;
  const auto g = encode_gray(pool[0].target, cfg);
  CHECK(g.size() == std::size_t(cfg.n_patches() * cfg.gray_dim()));
  CHECK(decode_gray(g, cfg) == pool[0].target);
  const auto b = encode_rgb(pool[0].boxmap, cfg);
  CHECK(b.size() == std::size_t(cfg.n_patches() * cfg.box_dim()));
  CHECK(decode_rgb(b, cfg) == pool[0].boxmap);
  for (float v : g) CHECK((v >= -1.0f && v <= 1.0f));

  Rng rng(1);
  const gf::RgbImage jit = jittered_box_map(pool[0].layout, 16, rng);
  int max_dev = 0;
  for (std::size_t i = 0; i < jit.pixels.size(); ++i)
    max_dev = std::max(max_dev, std::abs(int(jit.pixels[i]) - int(pool[0].boxmap.pixels[i])));
  CHECK(max_dev <= 16);
  CHECK(max_dev > 0);
}

TEST_CASE("log line format") {
  StepRecord r;
  r.step = 7;
  r.loss = {1.5, 0.5, 0.25, 0.125};
  r.draw.regime = Regime::kS2;
  r.draw.t = {0.5, 0.0, 0.0};
  CHECK(log_header() == "step\ttotal\tL_img\tL_box\tL_cond\tregime\tt_img\tt_box\tt_cond");
  CHECK(format_log_line(r) == "7\t1.5\t0.5\t0.25\t0.125\tS2\t0.5000\t0.0000\t0.0000");
  CHECK(parse_regime("uncond") == Regime::kUncond);
  CHECK(code_of([] { parse_regime("S3"); }) == gf::Errc::kConfigError);
}

TEST_CASE("learning-rate schedules") {
  TrainConfig c;
  c.lr = 2e-3;
  c.steps = 110;
  for (std::int64_t s : {0, 50, 109}) CHECK(c.lr_at(s) == 2e-3);
  c.lr_schedule = "cosine";
  c.warmup = 10;
  c.lr_final = 0.1;
  CHECK(c.lr_at(0) == doctest::Approx(2e-4));
  CHECK(c.lr_at(9) == doctest::Approx(2e-3));
  CHECK(c.lr_at(10) == doctest::Approx(2e-3));
  // Halfway through the decay: lr * (f + (1 - f) / 2).
  CHECK(c.lr_at(60) == doctest::Approx(2e-3 * 0.55));
  CHECK(c.lr_at(110) == doctest::Approx(2e-4));
  CHECK(c.lr_at(500) == doctest::Approx(2e-4));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  const auto atlas = gf::corpus::GlyphAtlas::procedural();
  const auto pool = make_pool(atlas, 16, 4, 3);
  Model<float> model(small_config(), Init::kRandom, 1);
  const std::vector<float> before(model.params().begin(), model.params().end());
  TrainConfig tc;
  tc.lr = 0.0;
  Trainer trainer(model, tc, atlas.null_token());
  for (int i = 0; i < 4; ++i) {
    const StepRecord r = trainer.step(pool);
    CHECK(r.step == i + 1);
    CHECK(std::isfinite(r.loss.total));
  }
  CHECK(std::equal(before.begin(), before.end(), model.params().begin()));
  CHECK(trainer.steps_done() == 4);
  CHECK(code_of([&] { trainer.step({}); }) == gf::Errc::kEmptyPool);
}

TEST_CASE("identical seeds give identical loss curves") {
  const auto atlas = gf::corpus::GlyphAtlas::procedural();
  const auto pool = make_pool(atlas, 16, 6, 4);
  auto run = [&](int threads) {
    Model<float> model(small_config(), Init::kAdaLnZero, 9);
    TrainConfig tc;
    tc.seed = 21;
    tc.batch = 3;
    tc.threads = threads;
    Trainer trainer(model, tc, atlas.null_token());
    std::vector<double> curve;
    for (int i = 0; i < 12; ++i) curve.push_back(trainer.step(pool).loss.total);
    return std::pair{curve, std::vector<float>(model.params().begin(), model.params().end())};
  };
  const auto a = run(1), b = run(1);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  // Per-sample passes may run on several threads without changing a bit.
  const auto c = run(3);
  CHECK(c.first == a.first);
  CHECK(c.second == a.second);
}

TEST_CASE("non-finite loss aborts the step before any update") {
  const auto atlas = gf::corpus::GlyphAtlas::procedural();
  const auto pool = make_pool(atlas, 16, 2, 5);
  Model<float> model(small_config(), Init::kRandom, 2);
  model.param("head.img.b")[0] = std::nanf("");
  model.param("head.box.b")[0] = std::nanf("");
  const std::vector<float> before(model.params().begin(), model.params().end());
  Trainer trainer(model, TrainConfig{}, atlas.null_token());
  CHECK(code_of([&] { trainer.step(pool); }) == gf::Errc::kNonFiniteLoss);
  CHECK(trainer.steps_done() == 0);
  CHECK(std::memcmp(before.data(), model.params().data(), before.size() * sizeof(float)) == 0);
}

TEST_CASE("overfit smoke run lowers the moving-average loss") {
  const auto atlas = gf::corpus::GlyphAtlas::procedural();
  const auto pool = make_pool(atlas, 64, 2, 6);
  Model<float> model(ModelConfig{}, Init::kAdaLnZero, 3);
  TrainConfig tc;
  tc.seed = 5;
  Trainer trainer(model, tc, atlas.null_token());
  std::vector<double> loss;
  for (int i = 0; i < 200; ++i) loss.push_back(trainer.step(pool).loss.total);
  auto window = [&](int end) {
    return std::accumulate(loss.begin() + end - 20, loss.begin() + end, 0.0) / 20.0;
  };
  MESSAGE("trailing-20 loss: first " << window(20) << ", last " << window(200));
  CHECK(window(200) < window(20));
  CHECK(window(200) < window(110));
}
