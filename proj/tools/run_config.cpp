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

#include "run_config.hpp"

#include "glyphflow/common/error.hpp"
#include "glyphflow/common/image.hpp"

namespace gf::cli {

namespace {

KeyValues section(const KeyValues& kv, const std::string& prefix) {
  KeyValues out;
  for (const auto& [k, v] : kv.entries())
    if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), v);
  return out;
}

void add_section(KeyValues& out, const std::string& prefix, const KeyValues& kv) {
  for (const auto& [k, v] : kv.entries()) out.set(prefix + k, v);
}

}  // namespace

KeyValues RunConfig::to_kv() const {
  KeyValues out, kv;
  corpus.write(kv);
  kv.set("count", corpus_count);
  kv.set("threads", corpus_threads);
  add_section(out, "corpus.", kv);
  kv = {};
  model.write(kv);
  add_section(out, "model.", kv);
  kv = {};
  train.write(kv);
  kv.set("checkpoint_every", checkpoint_every);
  add_section(out, "train.", kv);
  kv = {};
  infer.write(kv);
  add_section(out, "infer.", kv);
  kv = {};
  drs.write(kv);
  add_section(out, "drs.", kv);
  return out;
}

KeyValues default_kv() { return RunConfig{}.to_kv(); }

RunConfig RunConfig::resolve(const KeyValues& overrides) {
  KeyValues merged = default_kv();
  for (const auto& [k, v] : overrides.entries()) {
    require(merged.has(k), Errc::kConfigError, "unknown config key '" + k + "'");
    merged.set(k, v);
  }
  RunConfig rc;
  const KeyValues c = section(merged, "corpus.");
  rc.corpus = corpus::CorpusConfig::read(c);
  rc.corpus_count = static_cast<int>(c.get_int("count"));
  rc.corpus_threads = static_cast<int>(c.get_int("threads"));
  require(rc.corpus_count >= 0 && rc.corpus_threads >= 1, Errc::kConfigError,
          "corpus.count must be nonnegative and corpus.threads positive");
  rc.model = backbone::ModelConfig::read(section(merged, "model."));
  const KeyValues t = section(merged, "train.");
  rc.train = flow::TrainConfig::read(t);
  rc.checkpoint_every = t.get_int("checkpoint_every");
  require(rc.checkpoint_every >= 1, Errc::kConfigError, "train.checkpoint_every must be positive");
  rc.infer = infer::IntegratorConfig::read(section(merged, "infer."));
  rc.drs = forensics::DRSConfig::read(section(merged, "drs."));
  return rc;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& sets) {
  KeyValues kv;
  if (!path.empty()) {
    const auto bytes = read_file_bytes(path);
    kv = KeyValues::parse(std::string(bytes.begin(), bytes.end()));
  }
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, Errc::kConfigError,
            "--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return RunConfig::resolve(kv);
}

}  // namespace gf::cli
