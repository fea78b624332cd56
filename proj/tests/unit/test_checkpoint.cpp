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

#include <filesystem>

#include "doctest.h"
#include "glyphflow/common/error.hpp"
#include "glyphflow/common/image.hpp"
#include "glyphflow/flow/checkpoint.hpp"

using namespace gf::flow;
using gf::backbone::Init;
using gf::backbone::Model;
using gf::backbone::ModelConfig;

namespace {

namespace fs = std::filesystem;

std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("glyphflow_ckpt_" + name);
  fs::remove_all(p);
  return p.string();
}

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

std::vector<gf::corpus::Triplet> pool(const gf::corpus::GlyphAtlas& atlas) {
  gf::corpus::CorpusConfig cc;
  cc.canvas = 16;
  cc.font_size = 6;
  cc.k_min = 1;
  cc.k_max = 2;
  return gf::corpus::generate_corpus(atlas, cc, 5, 1);
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const Model<float> model(small_config(), Init::kRandom, 4);
  AdamState adam;
  adam.m.assign(model.params().size(), 0.5f);
  adam.v.assign(model.params().size(), 0.25f);
  adam.step = 17;
  gf::KeyValues meta;
  meta.set("corpus_seed", std::uint64_t{42});
  const std::string path = scratch("rt.bin");
  save_checkpoint(path, model, &adam, meta);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.model == model.config());
  CHECK(std::equal(ck.params.begin(), ck.params.end(), model.params().begin()));
  CHECK(ck.has_optimizer);
  CHECK(ck.adam.step == 17);
  CHECK(ck.adam.m == adam.m);
  CHECK(ck.adam.v == adam.v);
  CHECK(ck.meta.get("corpus_seed") == "42");
  const Model<float> back = ck.instantiate();
  CHECK(std::equal(back.params().begin(), back.params().end(), model.params().begin()));

  save_checkpoint(path, model, nullptr, {});
  const Checkpoint bare = load_checkpoint(path);
  CHECK_FALSE(bare.has_optimizer);
  CHECK(bare.adam.m.empty());
  CHECK(!fs::exists(path + ".tmp"));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const Model<float> model(small_config(), Init::kRandom, 4);
  const std::string path = scratch("bad.bin");
  save_checkpoint(path, model, nullptr, {});
  const auto good = gf::read_file_bytes(path);

  auto with = [&](std::vector<std::uint8_t> bytes) {
    gf::write_file_bytes(path, bytes);
    return code_of([&] { load_checkpoint(path); });
  };
  auto magic = good;
  magic[0] = 'X';
  CHECK(with(magic) == gf::Errc::kFormatVersionMismatch);
  auto version = good;
  version[4] = 9;
  CHECK(with(version) == gf::Errc::kFormatVersionMismatch);
  CHECK(with(std::vector<std::uint8_t>(good.begin(), good.end() - 4)) == gf::Errc::kIoFailure);
  auto longer = good;
  longer.push_back(0);
  CHECK(with(longer) == gf::Errc::kIoFailure);
  CHECK(with(std::vector<std::uint8_t>(good.begin(), good.begin() + 6)) == gf::Errc::kIoFailure);

  // Rewrite one tensor shape inside the header.
  std::string text(good.begin(), good.end());
  const auto pos = text.find("tok_emb f32 37,32");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 17, "tok_emb f32 37,31");
  CHECK(with(std::vector<std::uint8_t>(text.begin(), text.end())) == gf::Errc::kConfigMismatch);
  CHECK(code_of([&] { load_checkpoint(scratch("missing.bin")); }) == gf::Errc::kIoFailure);
}

TEST_CASE("resumed training reproduces the uninterrupted run") {
  const auto atlas = gf::corpus::GlyphAtlas::procedural();
  const auto data = pool(atlas);
  TrainConfig tc;
  tc.seed = 3;

  Model<float> straight(small_config(), Init::kAdaLnZero, 2);
  Trainer a(straight, tc, atlas.null_token());
  std::vector<double> full;
  for (int i = 0; i < 8; ++i) full.push_back(a.step(data).loss.total);

  Model<float> first(small_config(), Init::kAdaLnZero, 2);
  Trainer b(first, tc, atlas.null_token());
  std::vector<double> resumed;
  for (int i = 0; i < 4; ++i) resumed.push_back(b.step(data).loss.total);
  const std::string path = scratch("resume.bin");
  save_checkpoint(path, first, &b.adam(), {});

  const Checkpoint ck = load_checkpoint(path);
  Model<float> second = ck.instantiate();
  Trainer c(second, tc, atlas.null_token());
  c.adam() = ck.adam;
  for (int i = 0; i < 4; ++i) resumed.push_back(c.step(data).loss.total);
  CHECK(resumed == full);
  CHECK(std::equal(second.params().begin(), second.params().end(), straight.params().begin()));
}

TEST_CASE("train config round-trips through key=value text") {
  TrainConfig c;
  c.lr = 1e-5;
  c.batch = 4;
  c.steps = 77;
  c.probs = {0.5, 0.2, 0.2, 0.1};
  c.lr_schedule = "cosine";
  c.warmup = 5;
  c.lr_final = 0.25;
  gf::KeyValues kv;
  c.write(kv);
  const TrainConfig back = TrainConfig::read(gf::KeyValues::parse(kv.str()));
  CHECK(back.lr == 1e-5);
  CHECK(back.batch == 4);
  CHECK(back.steps == 77);
  CHECK(back.probs.s1 == 0.5);
  CHECK(back.probs.uncond == 0.1);
  CHECK(back.lr_schedule == "cosine");
  CHECK(back.warmup == 5);
  CHECK(back.lr_final == 0.25);
  kv.set("lr_schedule", std::string("linear"));
  CHECK(code_of([&] { TrainConfig::read(kv); }) == gf::Errc::kConfigError);
  kv.set("lr_schedule", std::string("constant"));
  kv.set("p_s1", 0.9);
  CHECK(code_of([&] { TrainConfig::read(kv); }) == gf::Errc::kConfigError);
}
