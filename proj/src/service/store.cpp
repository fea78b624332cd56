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

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>

#include "glyphflow/common/error.hpp"
#include "glyphflow/common/rng.hpp"
#include "glyphflow/service/service.hpp"
#include "json.hpp"

namespace gf::service {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string rev_name(std::int64_t rev) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rev-%06lld", static_cast<long long>(rev));
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  write_file_bytes(p.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& p) {
  const auto bytes = read_file_bytes(p.string());
  return {bytes.begin(), bytes.end()};
}

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-') return false;
  return true;
}

}  // namespace

SessionStore::SessionStore(std::string root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  require(!ec, Errc::kIoFailure, "cannot create session store " + root_);
  std::random_device rd;
  salt_ = (std::uint64_t(rd()) << 32) ^ rd() ^
          static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
}

std::string SessionStore::new_id() {
  std::lock_guard lock(id_mutex_);
  for (;;) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(splitmix64(salt_ + counter_++)));
    if (!exists(buf)) return buf;
  }
}

bool SessionStore::exists(const std::string& id) const {
  return valid_id(id) && fs::exists(fs::path(root_) / id / "meta.json");
}

void SessionStore::put(const Session& s, const SessionImages& images) {
  require(valid_id(s.id), Errc::kInvalidArgument, "bad session id");
  const fs::path dir = fs::path(root_) / s.id;
  fs::create_directories(dir);
  if (s.revision > 0) {
    const fs::path rev = dir / rev_name(s.revision);
    fs::remove_all(rev);
    fs::create_directories(rev);
    write_text(rev / "layout.json", layout::to_json(s.layout));
    write_png((rev / "target.png").string(), images.target);
    write_png((rev / "boxmap.png").string(), images.boxmap);
    write_png((rev / "condition.png").string(), images.condition);
  }
  ordered_json m;
  m["id"] = s.id;
  m["style"] = s.style;
  m["glyphs"] = s.glyphs;
  m["seed"] = s.seed;
  m["boxes"] = s.boxes;
  m["decode_empty"] = s.decode_empty;
  m["revision"] = s.revision;
  m["created"] = s.created;
  m["updated"] = s.updated;
  write_text(dir / "seed.txt", "seed=" + std::to_string(s.seed) + "\n");
  write_text(dir / "meta.json.tmp", m.dump(2));
  std::error_code ec;
  fs::rename(dir / "meta.json.tmp", dir / "meta.json", ec);
  require(!ec, Errc::kIoFailure, "cannot commit session " + s.id);
  // Older revisions are unreachable once meta.json names the new one.
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && entry.path().filename().string() != rev_name(s.revision))
      fs::remove_all(entry.path(), ec);
}

std::optional<Session> SessionStore::get(const std::string& id) const {
  if (!exists(id)) return std::nullopt;
  const fs::path dir = fs::path(root_) / id;
  const auto m = nlohmann::json::parse(read_text(dir / "meta.json"));
  Session s;
  s.id = m.at("id").get<std::string>();
  s.style = m.at("style").get<int>();
  s.glyphs = m.at("glyphs").get<std::vector<int>>();
  s.seed = m.at("seed").get<std::uint64_t>();
  s.boxes = m.at("boxes").get<std::string>();
  s.decode_empty = m.at("decode_empty").get<bool>();
  s.revision = m.at("revision").get<std::int64_t>();
  s.created = m.at("created").get<std::int64_t>();
  s.updated = m.at("updated").get<std::int64_t>();
  if (s.revision > 0) s.layout = layout::from_json(read_text(dir / rev_name(s.revision) / "layout.json"));
  return s;
}

SessionImages SessionStore::images(const Session& s) const {
  SessionImages im;
  if (s.revision == 0) return im;
  const fs::path rev = fs::path(root_) / s.id / rev_name(s.revision);
  im.target = read_png_gray((rev / "target.png").string());
  im.boxmap = read_png_rgb((rev / "boxmap.png").string());
  im.condition = read_png_gray((rev / "condition.png").string());
  return im;
}

}  // namespace gf::service
