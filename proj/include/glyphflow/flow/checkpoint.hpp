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
#include "glyphflow/flow/flow.hpp"

namespace gf::flow {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// On-disk layout: "GFCK" magic, u32 version, u32 header length, a key=value
// header (model config, step, metadata, tensor table), then raw little-endian
// f32 payloads: parameters, then optionally the two Adam moment buffers.
struct Checkpoint {
  backbone::ModelConfig model;
  std::vector<float> params;
  bool has_optimizer = false;
  AdamState adam;
  KeyValues meta;  // free-form: train config, corpus seed, ...

  backbone::Model<float> instantiate() const;
};

void save_checkpoint(const std::string& path, const backbone::Model<float>& model,
                     const AdamState* adam, const KeyValues& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gf::flow
