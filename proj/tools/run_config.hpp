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

#include <string>
#include <vector>

#include "glyphflow/backbone/model.hpp"
#include "glyphflow/common/kv.hpp"
#include "glyphflow/corpus/corpus.hpp"
#include "glyphflow/flow/flow.hpp"
#include "glyphflow/forensics/forensics.hpp"
#include "glyphflow/infer/infer.hpp"

namespace gf::cli {

// Every tunable of a run under one flat key space, `section.key=value`, with
// sections corpus, model, train, infer and drs.
struct RunConfig {
  corpus::CorpusConfig corpus;
  int corpus_count = 32;
  int corpus_threads = 1;
  backbone::ModelConfig model;
  flow::TrainConfig train;
  std::int64_t checkpoint_every = 1000;
  infer::IntegratorConfig infer;
  forensics::DRSConfig drs;

  KeyValues to_kv() const;
  // Applies `overrides` on top of the defaults; unknown keys are an error.
  static RunConfig resolve(const KeyValues& overrides);
};

KeyValues default_kv();
// Reads a config file and applies `key=value` overrides in order, last one wins.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& sets);

}  // namespace gf::cli
