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

#include <stdexcept>
#include <string>
#include <string_view>

namespace gf {

// Machine-readable error codes. The CLI prints them as `error: <code>: ...`
// and the service maps them onto HTTP status codes.
enum class Errc {
  kCapacityExceeded,
  kUnknownGlyph,
  kDimensionMismatch,
  kEmptyPool,
  kIoFailure,
  kFormatVersionMismatch,
  kPaletteExhausted,
  kInvalidTarget,
  kOutOfCanvas,
  kBelowMinSize,
  kShapeMismatch,
  kLengthOverflow,
  kBadHeadDim,
  kConfigMismatch,
  kNonFiniteLoss,
  kNonFiniteState,
  kDecodeEmpty,
  kInvalidLayout,
  kConfigError,
  kInvalidArgument,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::kCapacityExceeded: return "capacity-exceeded";
    case Errc::kUnknownGlyph: return "unknown-glyph";
    case Errc::kDimensionMismatch: return "dimension-mismatch";
    case Errc::kEmptyPool: return "empty-pool";
    case Errc::kIoFailure: return "io-failure";
    case Errc::kFormatVersionMismatch: return "format-version-mismatch";
    case Errc::kPaletteExhausted: return "palette-exhausted";
    case Errc::kInvalidTarget: return "invalid-target";
    case Errc::kOutOfCanvas: return "out-of-canvas";
    case Errc::kBelowMinSize: return "below-min-size";
    case Errc::kShapeMismatch: return "shape-mismatch";
    case Errc::kLengthOverflow: return "length-overflow";
    case Errc::kBadHeadDim: return "bad-head-dim";
    case Errc::kConfigMismatch: return "config-mismatch";
    case Errc::kNonFiniteLoss: return "non-finite-loss";
    case Errc::kNonFiniteState: return "non-finite-state";
    case Errc::kDecodeEmpty: return "decode-empty";
    case Errc::kInvalidLayout: return "invalid-layout";
    case Errc::kConfigError: return "config-error";
    case Errc::kInvalidArgument: return "invalid-argument";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, Errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace gf
