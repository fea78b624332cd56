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

#include "glyphflow/flow/checkpoint.hpp"

#include <cstring>
#include <filesystem>

#include "glyphflow/common/error.hpp"
#include "glyphflow/common/image.hpp"

namespace gf::flow {

namespace {

constexpr char kMagic[4] = {'G', 'F', 'C', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> v) {
  static_assert(sizeof(float) == 4);
  for (float f : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
}

}  // namespace

backbone::Model<float> Checkpoint::instantiate() const {
  backbone::Model<float> m(model, backbone::Init::kAdaLnZero, 0);
  require(m.params().size() == params.size(), Errc::kConfigMismatch,
          "checkpoint parameter count does not match its config");
  std::copy(params.begin(), params.end(), m.params().begin());
  return m;
}

void save_checkpoint(const std::string& path, const backbone::Model<float>& model,
                     const AdamState* adam, const KeyValues& meta) {
  const auto params = model.params();
  if (adam)
    require(adam->m.size() == params.size() && adam->v.size() == params.size(),
            Errc::kConfigMismatch, "optimizer state does not match the model");
  KeyValues header;
  model.config().write(header);
  header.set("optimizer", std::string(adam ? "adamw" : "none"));
  header.set("step", adam ? adam->step : std::int64_t{0});
  const auto& specs = model.tensors();
  header.set("tensors", static_cast<std::int64_t>(specs.size()));
  for (std::size_t i = 0; i < specs.size(); ++i)
    header.set("tensor." + std::to_string(i),
               specs[i].name + " f32 " + std::to_string(specs[i].rows) + "," +
                   std::to_string(specs[i].cols));
  for (const auto& [k, v] : meta.entries()) header.set("meta." + k, v);

  const std::string text = header.str();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put_floats(out, params);
  if (adam) {
    put_floats(out, adam->m);
    put_floats(out, adam->v);
  }
  // Write to a sibling file and rename so a crash never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  write_file_bytes(tmp, out);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, Errc::kIoFailure, "cannot move checkpoint into place at " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  require(bytes.size() >= 12, Errc::kIoFailure, path + ": truncated checkpoint header");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, Errc::kFormatVersionMismatch,
          path + ": not a checkpoint file");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  require(version == kCheckpointVersion, Errc::kFormatVersionMismatch,
          path + ": checkpoint version " + std::to_string(version) + ", expected " +
              std::to_string(kCheckpointVersion));
  const std::uint32_t hlen = get_u32(bytes.data() + 8);
  require(bytes.size() >= 12 + std::size_t(hlen), Errc::kIoFailure, path + ": truncated header");
  const KeyValues header =
      KeyValues::parse(std::string(bytes.begin() + 12, bytes.begin() + 12 + hlen));

  Checkpoint ck;
  ck.model = backbone::ModelConfig::read(header);
  const auto specs = backbone::parameter_layout(ck.model);
  require(header.get_int("tensors") == static_cast<std::int64_t>(specs.size()),
          Errc::kConfigMismatch, path + ": tensor table does not match the model config");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const std::string expect = specs[i].name + " f32 " + std::to_string(specs[i].rows) + "," +
                               std::to_string(specs[i].cols);
    require(header.get("tensor." + std::to_string(i)) == expect, Errc::kConfigMismatch,
            path + ": tensor " + std::to_string(i) + " is '" +
                header.get("tensor." + std::to_string(i)) + "', expected '" + expect + "'");
  }
  ck.has_optimizer = header.get("optimizer") == "adamw";
  const std::size_t n = backbone::parameter_count(ck.model);
  const std::size_t want = 12 + std::size_t(hlen) + 4 * n * (ck.has_optimizer ? 3 : 1);
  require(bytes.size() >= want, Errc::kIoFailure, path + ": truncated payload");
  require(bytes.size() == want, Errc::kIoFailure, path + ": trailing bytes after payload");

  auto read_block = [&](std::size_t block) {
    std::vector<float> v(n);
    const std::uint8_t* p = bytes.data() + 12 + hlen + 4 * n * block;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t bits = get_u32(p + 4 * i);
      std::memcpy(&v[i], &bits, 4);
    }
    return v;
  };
  ck.params = read_block(0);
  if (ck.has_optimizer) {
    ck.adam.m = read_block(1);
    ck.adam.v = read_block(2);
  }
  ck.adam.step = header.get_int("step");
  for (const auto& [k, v] : header.entries())
    if (k.rfind("meta.", 0) == 0) ck.meta.set(k.substr(5), v);
  return ck;
}

}  // namespace gf::flow
