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

#include <cmath>

#include "doctest.h"
#include "glyphflow/backbone/model.hpp"
#include "glyphflow/common/error.hpp"
#include "glyphflow/common/rng.hpp"

using namespace gf::backbone;
using gf::sequence::Modality;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_blocks = 2;
  c.canvas = 16;
  c.patch = 4;
  return c;
}

template <class T>
struct Sample {
  std::vector<int> prompt;
  std::vector<T> img, box, cond;
  TimestepTriplet t;
  Inputs<T> inputs() const { return {prompt, img, box, cond, t}; }
};

template <class T>
Sample<T> random_sample(const ModelConfig& c, gf::Rng& rng) {
  Sample<T> s;
  s.prompt = {c.vocab - 3, 4, 17, 9};
  const int n = c.n_patches();
  auto fill = [&](std::vector<T>& v, int width) {
    v.resize(std::size_t(n) * width);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-1, 1));
  };
  fill(s.img, c.gray_dim());
  fill(s.box, c.box_dim());
  fill(s.cond, c.gray_dim());
  s.t = {rng.uniform(), rng.uniform(), rng.uniform()};
  return s;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parameter count is a pure function of the config") {
  CHECK(parameter_count(ModelConfig{}) == 1307984);
  CHECK(parameter_count(small_config()) == 49616);
  Model<float> a(ModelConfig{}, Init::kAdaLnZero, 1);
  CHECK(a.params().size() == 1307984);
  const auto specs = parameter_layout(ModelConfig{});
  std::size_t off = 0;
  for (const auto& s : specs) {
    CHECK(s.offset == off);
    off += s.size();
  }
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), gf::Error);
  c = ModelConfig{};
  c.d_model = 24;
  c.n_heads = 4;  // head dim 6 is too small for three rotary axes
  try {
    c.validate();
    FAIL("expected bad-head-dim");
  } catch (const gf::Error& e) {
    CHECK(e.code() == gf::Errc::kBadHeadDim);
  }
  gf::KeyValues kv;
  ModelConfig{}.write(kv);
  CHECK(ModelConfig::read(kv) == ModelConfig{});
}

TEST_CASE("mask entries") {
  CHECK(attention_blocked(MaskMode::kLiteral, Modality::kBox, Modality::kImage));
  CHECK_FALSE(attention_blocked(MaskMode::kLiteral, Modality::kImage, Modality::kBox));
  CHECK_FALSE(attention_blocked(MaskMode::kLiteral, Modality::kBox, Modality::kText));
  CHECK_FALSE(attention_blocked(MaskMode::kLiteral, Modality::kBox, Modality::kCondition));
  CHECK_FALSE(attention_blocked(MaskMode::kLiteral, Modality::kText, Modality::kImage));
  CHECK(attention_blocked(MaskMode::kClosed, Modality::kBox, Modality::kImage));
  CHECK(attention_blocked(MaskMode::kClosed, Modality::kText, Modality::kImage));
  CHECK(attention_blocked(MaskMode::kClosed, Modality::kCondition, Modality::kImage));
  CHECK_FALSE(attention_blocked(MaskMode::kClosed, Modality::kImage, Modality::kImage));
  CHECK_FALSE(attention_blocked(MaskMode::kClosed, Modality::kImage, Modality::kBox));
  for (Modality q : {Modality::kText, Modality::kImage, Modality::kBox, Modality::kCondition})
    for (Modality k : {Modality::kText, Modality::kImage, Modality::kBox, Modality::kCondition})
      CHECK_FALSE(attention_blocked(MaskMode::kNone, q, k));
}

TEST_CASE("single attention layer: image values never reach box queries") {
  auto layout = gf::sequence::make_layout(3, 2);
  const int d = 16, heads = 2, tn = layout.total();
  gf::Rng rng(3);
  std::vector<double> qkv(std::size_t(tn) * 3 * d);
  for (auto& v : qkv) v = rng.normal();
  std::vector<double> probs(std::size_t(heads) * tn * tn), out(std::size_t(tn) * d);
  masked_attention(qkv.data(), probs.data(), out.data(), layout, d, heads, MaskMode::kLiteral);
  auto perturbed = qkv;
  const int img0 = layout.offset(Modality::kImage);
  for (int i = img0; i < img0 + layout.n; ++i)
    for (int j = d; j < 3 * d; ++j) perturbed[std::size_t(i) * 3 * d + j] += rng.normal() * 5;
  std::vector<double> out2(out.size());
  masked_attention(perturbed.data(), probs.data(), out2.data(), layout, d, heads, MaskMode::kLiteral);
  const int box0 = layout.offset(Modality::kBox);
  for (int i = box0; i < box0 + layout.n; ++i)
    for (int j = 0; j < d; ++j) CHECK(out[std::size_t(i) * d + j] == out2[std::size_t(i) * d + j]);
  // Image queries do see the change.
  double moved = 0;
  for (int j = 0; j < d; ++j)
    moved += std::abs(out[std::size_t(img0) * d + j] - out2[std::size_t(img0) * d + j]);
  CHECK(moved > 1e-3);
}

TEST_CASE("adaln helpers") {
  auto layout = gf::sequence::make_layout(2, 2);
  const int d = 4, tn = layout.total();
  gf::Rng rng(4);
  std::vector<double> x(std::size_t(tn) * d), y(x.size());
  for (auto& v : x) v = rng.normal();
  std::vector<double> mod(4 * 6 * d, 0.0);
  modulate_rows(x.data(), y.data(), layout, d, mod.data(), 6 * d, 0, d);
  CHECK(y == x);

  for (auto& v : mod) v = rng.normal();
  for (int j = 0; j < d; ++j) mod[2 * 6 * d + 2 * d + j] = 0.0;  // box gate1
  std::vector<double> upd(x.size());
  for (auto& v : upd) v = rng.normal();
  auto res = x;
  gated_residual(res.data(), upd.data(), layout, d, mod.data(), 6 * d, 2 * d);
  const int box0 = layout.offset(Modality::kBox);
  for (int i = 0; i < tn; ++i) {
    bool same = true;
    for (int j = 0; j < d; ++j) same = same && res[i * d + j] == x[i * d + j];
    CHECK(same == (i >= box0 && i < box0 + layout.n));
  }
}

TEST_CASE("timestep embedding") {
  ModelConfig c = small_config();
  Model<double> m(c, Init::kRandom, 7);
  const std::vector<int> p1{1, 2}, p2{5, 6, 7};
  const auto y1 = m.text_pool(p1), y2 = m.text_pool(p2);
  CHECK(m.timestep_embed(0.2, y1) == m.timestep_embed(0.2, y1));
  CHECK(m.timestep_embed(0.2, y1) != m.timestep_embed(0.2, y2));
  Model<double> ablated = m;
  for (const char* name : {"vec.w1", "vec.b1", "vec.w2", "vec.b2"})
    for (auto& v : ablated.param(name)) v = 0.0;
  CHECK(ablated.timestep_embed(0.2, y1) == ablated.timestep_embed(0.2, y2));

  for (double t : {0.0, 0.13, 0.5, 0.91, 1.0}) {
    std::vector<double> analytic;
    m.timestep_embed(t, y1, &analytic);
    const double h = 1e-6;
    // The sinusoidal map is smooth past [0, 1], so central differences work at the ends too.
    const double lo = t - h, hi = t + h;
    const auto a = m.timestep_embed(lo, y1), b = m.timestep_embed(hi, y1);
    for (int j = 0; j < c.d_model; ++j) {
      const double fd = (b[j] - a[j]) / (hi - lo);
      const double rel = std::abs(fd - analytic[j]) / std::max({std::abs(fd), std::abs(analytic[j]), 1e-6});
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("modality routing of affine parameters") {
  Model<double> m(small_config(), Init::kRandom, 8);
  const std::vector<int> prompt{34, 1, 2};
  const int d = m.config().d_model, stride = 6 * d;
  const auto a = m.modulation(1, {0.3, 0.6, 0.1}, prompt);
  const auto b = m.modulation(1, {0.9, 0.6, 0.1}, prompt);
  auto row = [&](const std::vector<double>& mod, Modality mm) {
    const auto off = std::size_t(gf::sequence::index(mm)) * stride;
    return std::vector<double>(mod.begin() + off, mod.begin() + off + stride);
  };
  CHECK(row(a, Modality::kBox) == row(b, Modality::kBox));
  CHECK(row(a, Modality::kCondition) == row(b, Modality::kCondition));
  CHECK(row(a, Modality::kText) == row(b, Modality::kText));
  CHECK(row(a, Modality::kImage) != row(b, Modality::kImage));
  // Text is modulated as clean (t = 0) regardless of the triplet.
  const auto z = m.modulation(1, {0.0, 0.0, 0.0}, prompt);
  CHECK(row(z, Modality::kText) == row(a, Modality::kText));
  CHECK(row(z, Modality::kImage) == row(z, Modality::kText));
}

TEST_CASE("forward is deterministic and validates shapes") {
  ModelConfig c = small_config();
  Model<float> m(c, Init::kRandom, 9);
  gf::Rng rng(1);
  auto s = random_sample<float>(c, rng);
  auto a = m.forward(s.inputs()), b = m.forward(s.inputs());
  CHECK(a.img == b.img);
  CHECK(a.box == b.box);
  CHECK(a.cond == b.cond);
  CHECK(a.img.size() == std::size_t(c.n_patches()) * c.gray_dim());
  CHECK(a.box.size() == std::size_t(c.n_patches()) * c.box_dim());
  auto bad = s.inputs();
  std::vector<float> short_img(s.img.begin(), s.img.end() - 1);
  bad.img = short_img;
  try {
    m.forward(bad);
    FAIL("expected config-mismatch");
  } catch (const gf::Error& e) {
    CHECK(e.code() == gf::Errc::kConfigMismatch);
  }
}

TEST_CASE("adaln-zero init outputs zero velocity") {
  ModelConfig c = small_config();
  Model<float> m(c, Init::kAdaLnZero, 2);
  gf::Rng rng(2);
  auto s = random_sample<float>(c, rng);
  auto out = m.forward(s.inputs());
  for (float v : out.img) CHECK(v == 0.0f);
  for (float v : out.box) CHECK(v == 0.0f);
}

TEST_CASE("box stream is causal end to end") {
  ModelConfig c = small_config();
  c.n_blocks = 4;
  gf::Rng rng(5);
  auto s = random_sample<float>(c, rng);
  auto perturbed = s;
  for (auto& v : perturbed.img) v = static_cast<float>(rng.uniform(-1, 1));

  Model<float> closed(c, Init::kRandom, 10);
  const auto a = closed.forward(s.inputs()), b = closed.forward(perturbed.inputs());
  CHECK(max_abs_diff(a.box, b.box) < 1e-5);
  CHECK(max_abs_diff(a.cond, b.cond) < 1e-5);
  CHECK(max_abs_diff(a.img, b.img) > 1e-3);

  Model<float> open = closed;
  open.set_mask(MaskMode::kNone);
  const auto c1 = open.forward(s.inputs()), c2 = open.forward(perturbed.inputs());
  CHECK(max_abs_diff(c1.box, c2.box) > 1e-3);

  // Blocking only box-to-image still leaks through text and condition tokens
  // once there is more than one block.
  Model<float> literal = closed;
  literal.set_mask(MaskMode::kLiteral);
  const auto l1 = literal.forward(s.inputs()), l2 = literal.forward(perturbed.inputs());
  CHECK(max_abs_diff(l1.box, l2.box) > 1e-6);
}

TEST_CASE("analytic gradients match central differences") {
  ModelConfig c = small_config();  // 2 blocks, d = 32
  for (MaskMode mask : {MaskMode::kClosed, MaskMode::kNone}) {
    c.mask = mask;
    Model<double> m(c, Init::kRandom, 11);
    gf::Rng rng(12);
    auto s = random_sample<double>(c, rng);
    Outputs<double> w;
    auto fill = [&](std::vector<double>& v, std::size_t n) {
      v.resize(n);
      for (auto& x : v) x = rng.normal();
    };
    const std::size_t np = c.n_patches();
    fill(w.img, np * c.gray_dim());
    fill(w.box, np * c.box_dim());
    fill(w.cond, np * c.gray_dim());
    auto loss = [&](const Model<double>& model) {
      auto o = model.forward(s.inputs());
      double l = 0;
      for (std::size_t i = 0; i < o.img.size(); ++i) l += w.img[i] * o.img[i];
      for (std::size_t i = 0; i < o.box.size(); ++i) l += w.box[i] * o.box[i];
      for (std::size_t i = 0; i < o.cond.size(); ++i) l += w.cond[i] * o.cond[i];
      return l;
    };
    Cache<double> cache;
    m.forward(s.inputs(), &cache);
    std::vector<double> grad(m.params().size(), 0.0);
    m.backward(cache, w, grad);

    // 20 random parameters plus one from every tensor family.
    std::vector<std::size_t> picks;
    for (int i = 0; i < 20; ++i)
      picks.push_back(static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(grad.size()) - 1)));
    for (const auto& spec : m.tensors()) {
      std::size_t idx = spec.offset + static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(spec.size()) - 1));
      if (spec.name == "tok_emb") idx = spec.offset + std::size_t(s.prompt[1]) * c.d_model + 3;
      picks.push_back(idx);
    }
    const double h = 1e-6;
    for (std::size_t idx : picks) {
      Model<double> plus = m, minus = m;
      plus.params()[idx] += h;
      minus.params()[idx] -= h;
      const double fd = (loss(plus) - loss(minus)) / (2 * h);
      const double rel =
          std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
      INFO("param index " << idx << " analytic " << grad[idx] << " numeric " << fd);
      CHECK(rel < 1e-3);
    }
  }
}

TEST_CASE("float and double forward agree") {
  ModelConfig c = small_config();
  Model<double> md(c, Init::kRandom, 13);
  Model<float> mf = md.cast<float>();
  gf::Rng rng(14);
  auto sd = random_sample<double>(c, rng);
  Sample<float> sf;
  sf.prompt = sd.prompt;
  sf.t = sd.t;
  sf.img.assign(sd.img.begin(), sd.img.end());
  sf.box.assign(sd.box.begin(), sd.box.end());
  sf.cond.assign(sd.cond.begin(), sd.cond.end());
  auto od = md.forward(sd.inputs());
  auto of = mf.forward(sf.inputs());
  for (std::size_t i = 0; i < od.box.size(); ++i) CHECK(std::abs(od.box[i] - of.box[i]) < 1e-3);
}
