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

#include "glyphflow/sequence/sequence.hpp"

#include <cmath>
#include <string>

#include "glyphflow/common/error.hpp"

namespace gf::sequence {

void PatchGrid::validate() const {
  require(canvas > 0 && patch > 0 && channels > 0 && canvas % patch == 0, Errc::kShapeMismatch,
          "patch size " + std::to_string(patch) + " does not divide canvas " +
              std::to_string(canvas));
}

template <class T>
std::vector<T> patchify(std::span<const T> planes, const PatchGrid& g) {
  g.validate();
  const std::size_t plane = static_cast<std::size_t>(g.canvas) * g.canvas;
  require(planes.size() == plane * g.channels, Errc::kShapeMismatch,
          "image does not match the patch grid");
  std::vector<T> out(planes.size());
  const int side = g.side(), p = g.patch;
  std::size_t o = 0;
  for (int py = 0; py < side; ++py)
    for (int px = 0; px < side; ++px)
      for (int c = 0; c < g.channels; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            out[o++] = planes[c * plane + static_cast<std::size_t>(py * p + dy) * g.canvas +
                              (px * p + dx)];
  return out;
}

template <class T>
std::vector<T> unpatchify(std::span<const T> patches, const PatchGrid& g) {
  g.validate();
  const std::size_t plane = static_cast<std::size_t>(g.canvas) * g.canvas;
  require(patches.size() == plane * g.channels, Errc::kShapeMismatch,
          "patch matrix does not match the patch grid");
  std::vector<T> out(patches.size());
  const int side = g.side(), p = g.patch;
  std::size_t o = 0;
  for (int py = 0; py < side; ++py)
    for (int px = 0; px < side; ++px)
      for (int c = 0; c < g.channels; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            out[c * plane + static_cast<std::size_t>(py * p + dy) * g.canvas + (px * p + dx)] =
                patches[o++];
  return out;
}

int SequenceLayout::offset(Modality m) const {
  switch (m) {
    case Modality::kText: return 0;
    case Modality::kImage: return text_len;
    case Modality::kBox: return text_len + n;
    case Modality::kCondition: return text_len + 2 * n;
  }
  return 0;
}

SequenceLayout make_layout(int text_len, int grid_side) {
  SequenceLayout l;
  l.text_len = text_len;
  l.n = grid_side * grid_side;
  for (int i = 0; i < text_len; ++i) {
    l.modality.push_back(Modality::kText);
    l.coords.push_back({0, i});
  }
  for (Modality m : {Modality::kImage, Modality::kBox, Modality::kCondition})
    for (int i = 0; i < l.n; ++i) {
      l.modality.push_back(m);
      l.coords.push_back({i / grid_side, i % grid_side});
    }
  return l;
}

template <class T>
TokenSequence<T> assemble_sequence(std::span<const int> prompt, std::span<const T> img,
                                   std::span<const T> box, std::span<const T> cond,
                                   int img_dim, int box_dim, const EmbeddingView<T>& emb,
                                   int max_text) {
  require(static_cast<int>(prompt.size()) <= max_text, Errc::kLengthOverflow,
          "prompt of " + std::to_string(prompt.size()) + " tokens exceeds " +
              std::to_string(max_text));
  require(img_dim <= emb.in_dim && box_dim <= emb.in_dim, Errc::kShapeMismatch,
          "patch width exceeds the input projection");
  require(img.size() % img_dim == 0 && box.size() % box_dim == 0 && cond.size() % img_dim == 0,
          Errc::kShapeMismatch, "ragged patch matrix");
  const int n = static_cast<int>(img.size() / img_dim);
  require(static_cast<int>(box.size() / box_dim) == n && static_cast<int>(cond.size() / img_dim) == n,
          Errc::kShapeMismatch, "visual streams disagree on the patch count");
  const int side = static_cast<int>(std::lround(std::sqrt(double(n))));
  require(side * side == n, Errc::kShapeMismatch, "patch count is not a square grid");

  const int d = emb.d_model;
  TokenSequence<T> seq;
  seq.d_model = d;
  seq.layout = make_layout(static_cast<int>(prompt.size()), side);
  seq.tokens.assign(static_cast<std::size_t>(seq.layout.total()) * d, T(0));
  T* out = seq.tokens.data();
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    require(prompt[i] >= 0 && prompt[i] < emb.vocab, Errc::kUnknownGlyph,
            "token " + std::to_string(prompt[i]) + " outside the vocabulary");
    const T* row = emb.token_table + static_cast<std::size_t>(prompt[i]) * d;
    std::copy(row, row + d, out + i * d);
  }
  auto project = [&](std::span<const T> patches, int width, int stream, Modality m) {
    T* base = out + static_cast<std::size_t>(seq.layout.offset(m)) * d;
    const T* e = emb.modality_emb + static_cast<std::size_t>(stream) * d;
    for (int r = 0; r < n; ++r) {
      T* z = base + static_cast<std::size_t>(r) * d;
      std::copy(e, e + d, z);
      const T* pr = patches.data() + static_cast<std::size_t>(r) * width;
      for (int k = 0; k < width; ++k) {
        const T pv = pr[k];
        if (pv == T(0)) continue;
        const T* w = emb.w_in + static_cast<std::size_t>(k) * d;
        for (int j = 0; j < d; ++j) z[j] += pv * w[j];
      }
    }
  };
  project(img, img_dim, 0, Modality::kImage);
  project(box, box_dim, 1, Modality::kBox);
  project(cond, img_dim, 2, Modality::kCondition);
  return seq;
}

RopeSplit rope_split(int head_dim) {
  require(head_dim > 0 && head_dim % 2 == 0 && head_dim >= 8, Errc::kBadHeadDim,
          "head dimension " + std::to_string(head_dim) + " must be even and at least 8");
  const int pairs = head_dim / 2;
  RopeSplit s;
  s.modality = pairs / 4;
  s.y = (pairs - s.modality) / 2;
  s.x = pairs - s.modality - s.y;
  return s;
}

namespace {

void fill_angles(const RopeSplit& s, Modality m, Coord c, double* angles) {
  int j = 0;
  auto group = [&](int count, double value) {
    for (int k = 0; k < count; ++k)
      angles[j++] = value * std::pow(10000.0, -static_cast<double>(k) / count);
  };
  group(s.modality, static_cast<double>(index(m)));
  group(s.y, static_cast<double>(c.y));
  group(s.x, static_cast<double>(c.x));
}

template <class T>
void rotate_pairs(T* v, const double* cs, const double* sn, int pairs, bool inverse) {
  for (int j = 0; j < pairs; ++j) {
    const double a = v[2 * j], b = v[2 * j + 1];
    const double s = inverse ? -sn[j] : sn[j];
    v[2 * j] = static_cast<T>(a * cs[j] - b * s);
    v[2 * j + 1] = static_cast<T>(a * s + b * cs[j]);
  }
}

}  // namespace

RopeTable::RopeTable(std::span<const Modality> modality, std::span<const Coord> coords,
                     int head_dim)
    : head_dim_(head_dim) {
  require(modality.size() == coords.size(), Errc::kShapeMismatch, "modality/coord mismatch");
  const RopeSplit s = rope_split(head_dim);
  pairs_ = s.pairs();
  cos_.resize(modality.size() * pairs_);
  sin_.resize(modality.size() * pairs_);
  std::vector<double> angles(static_cast<std::size_t>(pairs_));
  for (std::size_t i = 0; i < modality.size(); ++i) {
    fill_angles(s, modality[i], coords[i], angles.data());
    for (int j = 0; j < pairs_; ++j) {
      cos_[i * pairs_ + j] = std::cos(angles[static_cast<std::size_t>(j)]);
      sin_[i * pairs_ + j] = std::sin(angles[static_cast<std::size_t>(j)]);
    }
  }
}

template <class T>
void RopeTable::apply(T* v, int token, bool inverse) const {
  const std::size_t o = static_cast<std::size_t>(token) * pairs_;
  rotate_pairs(v, cos_.data() + o, sin_.data() + o, pairs_, inverse);
}

template <class T>
void rope_rotate(std::span<T> v, Modality m, Coord c) {
  const RopeSplit s = rope_split(static_cast<int>(v.size()));
  std::vector<double> angles(static_cast<std::size_t>(s.pairs())), cs(angles.size()),
      sn(angles.size());
  fill_angles(s, m, c, angles.data());
  for (std::size_t j = 0; j < angles.size(); ++j) {
    cs[j] = std::cos(angles[j]);
    sn[j] = std::sin(angles[j]);
  }
  rotate_pairs(v.data(), cs.data(), sn.data(), s.pairs(), false);
}

#define GF_INSTANTIATE(T)                                                                 \
  template std::vector<T> patchify<T>(std::span<const T>, const PatchGrid&);              \
  template std::vector<T> unpatchify<T>(std::span<const T>, const PatchGrid&);            \
  template TokenSequence<T> assemble_sequence<T>(std::span<const int>, std::span<const T>, \
                                                 std::span<const T>, std::span<const T>,  \
                                                 int, int, const EmbeddingView<T>&, int); \
  template void RopeTable::apply<T>(T*, int, bool) const;                                 \
  template void rope_rotate<T>(std::span<T>, Modality, Coord);
GF_INSTANTIATE(float)
GF_INSTANTIATE(double)
#undef GF_INSTANTIATE

}  // namespace gf::sequence
