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

#include <cstdint>
#include <span>
#include <vector>

namespace gf::sequence {

enum class Modality : int { kText = 0, kImage = 1, kBox = 2, kCondition = 3 };
inline constexpr int kModalityCount = 4;
inline int index(Modality m) { return static_cast<int>(m); }

struct PatchGrid {
  int canvas = 64;
  int patch = 4;
  int channels = 1;

  int side() const { return canvas / patch; }
  int count() const { return side() * side(); }
  int dim() const { return patch * patch * channels; }
  void validate() const;
};

// Planar channel-major image [channels x canvas x canvas] to [N x p*p*channels]
// patch rows. Row i is patch (i / side, i % side); within a row values are
// channel-major, then row-major inside the patch.
template <class T>
std::vector<T> patchify(std::span<const T> planes, const PatchGrid& grid);
template <class T>
std::vector<T> unpatchify(std::span<const T> patches, const PatchGrid& grid);

struct Coord {
  int y = 0;
  int x = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

// Token bookkeeping for Z = [text; image; box; condition].
struct SequenceLayout {
  int text_len = 0;
  int n = 0;
  std::vector<Modality> modality;
  std::vector<Coord> coords;

  int total() const { return text_len + 3 * n; }
  int offset(Modality m) const;
};

SequenceLayout make_layout(int text_len, int grid_side);

// Borrowed views of the embedding parameters.
template <class T>
struct EmbeddingView {
  const T* token_table = nullptr;  // [vocab x d]
  int vocab = 0;
  const T* w_in = nullptr;  // [in_dim x d], shared by the three visual streams
  int in_dim = 0;
  const T* modality_emb = nullptr;  // [3 x d]: image, box, condition
  int d_model = 0;
};

template <class T>
struct TokenSequence {
  std::vector<T> tokens;  // [total x d]
  SequenceLayout layout;
  int d_model = 0;
};

// Visual patches narrower than in_dim use the leading columns of W_in, which
// is the same as zero-padding them to in_dim.
template <class T>
TokenSequence<T> assemble_sequence(std::span<const int> prompt, std::span<const T> img,
                                   std::span<const T> box, std::span<const T> cond,
                                   int img_dim, int box_dim, const EmbeddingView<T>& emb,
                                   int max_text);

// Rotary pairs split over (modality, y, x): a quarter to modality, the rest
// halved between y and x. Frequencies theta_j = 10000^(-j / group size).
struct RopeSplit {
  int modality = 0;
  int y = 0;
  int x = 0;
  int pairs() const { return modality + y + x; }
};
RopeSplit rope_split(int head_dim);

class RopeTable {
 public:
  RopeTable() = default;
  RopeTable(std::span<const Modality> modality, std::span<const Coord> coords, int head_dim);

  int head_dim() const { return head_dim_; }
  // Rotates one head vector of token `token` in place; inverse applies R^T.
  template <class T>
  void apply(T* v, int token, bool inverse = false) const;

 private:
  int head_dim_ = 0;
  int pairs_ = 0;
  std::vector<double> cos_, sin_;
};

template <class T>
void rope_rotate(std::span<T> v, Modality m, Coord c);

}  // namespace gf::sequence
