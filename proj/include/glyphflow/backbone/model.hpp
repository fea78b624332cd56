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

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glyphflow/common/kv.hpp"
#include "glyphflow/sequence/sequence.hpp"

namespace gf::backbone {

using sequence::Modality;

// kLiteral blocks only box queries from image keys. kClosed blocks every
// non-image query from image keys, which is what keeps the box stream free of
// image information across several blocks (text and condition tokens would
// otherwise relay it).
enum class MaskMode { kNone, kLiteral, kClosed };
std::string to_string(MaskMode m);
MaskMode parse_mask_mode(const std::string& s);
bool attention_blocked(MaskMode mode, Modality query, Modality key);

inline constexpr double kMaskedLogit = -1e9;
inline constexpr double kLayerNormEps = 1e-6;

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_blocks = 4;
  int patch = 4;
  int canvas = 64;
  int vocab = 37;
  int max_text = 16;
  int mlp_ratio = 4;
  MaskMode mask = MaskMode::kClosed;

  int head_dim() const { return d_model / n_heads; }
  int grid() const { return canvas / patch; }
  int n_patches() const { return grid() * grid(); }
  int gray_dim() const { return patch * patch; }
  int box_dim() const { return 3 * patch * patch; }
  int in_dim() const { return box_dim(); }
  int hidden() const { return mlp_ratio * d_model; }
  int stream_dim(Modality m) const { return m == Modality::kBox ? box_dim() : gray_dim(); }

  void validate() const;
  void write(KeyValues& kv) const;
  static ModelConfig read(const KeyValues& kv);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TensorSpec {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  bool is_bias() const { return rows == 1; }
};

std::vector<TensorSpec> parameter_layout(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

struct TimestepTriplet {
  double img = 0.0;
  double box = 0.0;
  double cond = 0.0;
  friend bool operator==(const TimestepTriplet&, const TimestepTriplet&) = default;
};

template <class T>
struct Inputs {
  std::span<const int> prompt;
  std::span<const T> img;   // [N x gray_dim]
  std::span<const T> box;   // [N x box_dim]
  std::span<const T> cond;  // [N x gray_dim]
  TimestepTriplet t;
};

template <class T>
struct Outputs {
  std::vector<T> img, box, cond;
};

enum class Init { kAdaLnZero, kRandom };

// Activations retained by forward() for backward().
template <class T>
struct BlockCache {
  std::vector<T> x_in, ln1, mean1, rstd1, a1, qkv, probs, attn, o;
  std::vector<T> x_mid, ln2, mean2, rstd2, a2, f1, g1, f;
  std::vector<T> mod;  // [4 x 6d]
};

template <class T>
struct Cache {
  std::vector<int> prompt;
  sequence::SequenceLayout layout;
  sequence::RopeTable rope;
  std::vector<T> img, box, cond;
  std::vector<T> y_txt, gamma, u_time, s_time, u_vec, s_vec, h, silu_h;
  std::vector<BlockCache<T>> blocks;
  std::vector<T> x_out, lnf, meanf, rstdf, fin, xf;
};

template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, Init init, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  void set_mask(MaskMode m) { cfg_.mask = m; }

  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  const std::vector<TensorSpec>& tensors() const { return specs_; }
  const TensorSpec& spec(const std::string& name) const;
  std::span<T> param(const std::string& name);
  std::span<const T> param(const std::string& name) const;

  Outputs<T> forward(const Inputs<T>& in, Cache<T>* cache = nullptr) const;
  // Accumulates d(loss)/d(params) into grad given d(loss)/d(outputs).
  void backward(const Cache<T>& cache, const Outputs<T>& d_out, std::span<T> grad) const;

  // Exposed pieces, used by tests.
  std::vector<T> text_pool(std::span<const int> prompt) const;
  // h = MLP_time(gamma(t)) + MLP_vec(y_txt); optionally dh/dt.
  std::vector<T> timestep_embed(double t, std::span<const T> y_txt,
                                std::vector<T>* dh_dt = nullptr) const;
  // Per-modality [shift1, scale1, gate1, shift2, scale2, gate2] rows for one
  // block, [4 x 6d], indexed by modality id.
  std::vector<T> modulation(int block, const TimestepTriplet& t, std::span<const int> prompt) const;

  template <class U>
  Model<U> cast() const {
    Model<U> out(cfg_, Init::kAdaLnZero, 0);
    auto dst = out.params();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return out;
  }

 private:
  const T* p(const std::string& name) const { return param(name).data(); }
  std::size_t offset(const std::string& name) const { return spec(name).offset; }
  void conditioning(const TimestepTriplet& t, std::span<const int> prompt, Cache<T>& c) const;

  ModelConfig cfg_;
  std::vector<TensorSpec> specs_;
  std::vector<T> params_;
};

// Building blocks shared by the model and its tests.
std::array<double, 4> timesteps_by_modality(const TimestepTriplet& t);

template <class T>
void modulate_rows(const T* x, T* y, const sequence::SequenceLayout& layout, int d, const T* mod,
                   int mod_stride, int shift_col, int scale_col);

template <class T>
void gated_residual(T* x, const T* update, const sequence::SequenceLayout& layout, int d,
                    const T* mod, int mod_stride, int gate_col);

// Multi-head attention over rope-rotated qkv rows [tokens x 3d]; writes the
// probabilities [heads x tokens x tokens] and the merged output [tokens x d].
template <class T>
void masked_attention(const T* qkv, T* probs, T* out, const sequence::SequenceLayout& layout,
                      int d, int heads, MaskMode mask);

}  // namespace gf::backbone
