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

#include "glyphflow/backbone/model.hpp"

#include <algorithm>
#include <cmath>

#include "glyphflow/common/error.hpp"
#include "glyphflow/common/rng.hpp"
#include "glyphflow/kernels/reference.hpp"

namespace gf::backbone {

namespace k = gf::kernels;
using sequence::SequenceLayout;

std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::kNone: return "none";
    case MaskMode::kLiteral: return "literal";
    case MaskMode::kClosed: return "closed";
  }
  return "?";
}

MaskMode parse_mask_mode(const std::string& s) {
  for (MaskMode m : {MaskMode::kNone, MaskMode::kLiteral, MaskMode::kClosed})
    if (to_string(m) == s) return m;
  fail(Errc::kConfigError, "unknown mask mode '" + s + "'");
}

bool attention_blocked(MaskMode mode, Modality query, Modality key) {
  if (key != Modality::kImage) return false;
  switch (mode) {
    case MaskMode::kNone: return false;
    case MaskMode::kLiteral: return query == Modality::kBox;
    case MaskMode::kClosed: return query != Modality::kImage;
  }
  return false;
}

void ModelConfig::validate() const {
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, Errc::kConfigError,
          "d_model must be a positive multiple of n_heads");
  sequence::rope_split(head_dim());
  require(d_model % 2 == 0, Errc::kConfigError, "d_model must be even");
  require(n_blocks >= 1 && mlp_ratio >= 1 && vocab >= 1 && max_text >= 1, Errc::kConfigError,
          "n_blocks, mlp_ratio, vocab and max_text must be positive");
  require(patch > 0 && canvas > 0 && canvas % patch == 0, Errc::kConfigError,
          "patch size must divide the canvas");
}

void ModelConfig::write(KeyValues& kv) const {
  kv.set("d_model", d_model);
  kv.set("n_heads", n_heads);
  kv.set("n_blocks", n_blocks);
  kv.set("patch", patch);
  kv.set("canvas", canvas);
  kv.set("vocab", vocab);
  kv.set("max_text", max_text);
  kv.set("mlp_ratio", mlp_ratio);
  kv.set("mask", to_string(mask));
}

ModelConfig ModelConfig::read(const KeyValues& kv) {
  ModelConfig c;
  c.d_model = static_cast<int>(kv.get_int("d_model"));
  c.n_heads = static_cast<int>(kv.get_int("n_heads"));
  c.n_blocks = static_cast<int>(kv.get_int("n_blocks"));
  c.patch = static_cast<int>(kv.get_int("patch"));
  c.canvas = static_cast<int>(kv.get_int("canvas"));
  c.vocab = static_cast<int>(kv.get_int("vocab"));
  c.max_text = static_cast<int>(kv.get_int("max_text"));
  c.mlp_ratio = static_cast<int>(kv.get_int("mlp_ratio"));
  c.mask = parse_mask_mode(kv.get("mask"));
  c.validate();
  return c;
}

std::vector<TensorSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model, hid = cfg.hidden();
  std::vector<TensorSpec> specs;
  std::size_t off = 0;
  auto add = [&](const std::string& name, int rows, int cols) {
    specs.push_back({name, off, rows, cols});
    off += static_cast<std::size_t>(rows) * cols;
  };
  add("tok_emb", cfg.vocab, d);
  add("w_in", cfg.in_dim(), d);
  add("mod_emb", 3, d);
  add("time.w1", d, d);
  add("time.b1", 1, d);
  add("time.w2", d, d);
  add("time.b2", 1, d);
  add("vec.w1", d, d);
  add("vec.b1", 1, d);
  add("vec.w2", d, d);
  add("vec.b2", 1, d);
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    add(pre + "ada.w", d, 6 * d);
    add(pre + "ada.b", 1, 6 * d);
    add(pre + "qkv.w", d, 3 * d);
    add(pre + "qkv.b", 1, 3 * d);
    add(pre + "proj.w", d, d);
    add(pre + "proj.b", 1, d);
    add(pre + "fc1.w", d, hid);
    add(pre + "fc1.b", 1, hid);
    add(pre + "fc2.w", hid, d);
    add(pre + "fc2.b", 1, d);
  }
  add("final.ada.w", d, 2 * d);
  add("final.ada.b", 1, 2 * d);
  add("head.img.w", d, cfg.gray_dim());
  add("head.img.b", 1, cfg.gray_dim());
  add("head.box.w", d, cfg.box_dim());
  add("head.box.b", 1, cfg.box_dim());
  add("head.cond.w", d, cfg.gray_dim());
  add("head.cond.b", 1, cfg.gray_dim());
  return specs;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const auto specs = parameter_layout(cfg);
  return specs.back().offset + specs.back().size();
}

std::array<double, 4> timesteps_by_modality(const TimestepTriplet& t) {
  return {0.0, t.img, t.box, t.cond};
}

// ---- shared building blocks -------------------------------------------------

template <class T>
void modulate_rows(const T* x, T* y, const SequenceLayout& layout, int d, const T* mod,
                   int mod_stride, int shift_col, int scale_col) {
  for (int i = 0; i < layout.total(); ++i) {
    const T* m = mod + static_cast<std::size_t>(sequence::index(layout.modality[i])) * mod_stride;
    const T* shift = m + shift_col;
    const T* scale = m + scale_col;
    const T* xr = x + static_cast<std::size_t>(i) * d;
    T* yr = y + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) yr[j] = xr[j] * (T(1) + scale[j]) + shift[j];
  }
}

template <class T>
void gated_residual(T* x, const T* update, const SequenceLayout& layout, int d, const T* mod,
                    int mod_stride, int gate_col) {
  for (int i = 0; i < layout.total(); ++i) {
    const T* g =
        mod + static_cast<std::size_t>(sequence::index(layout.modality[i])) * mod_stride + gate_col;
    T* xr = x + static_cast<std::size_t>(i) * d;
    const T* ur = update + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) xr[j] += g[j] * ur[j];
  }
}

namespace {

template <class T>
void add_mask(T* scores, const SequenceLayout& layout, MaskMode mode) {
  const int n = layout.total();
  for (int i = 0; i < n; ++i) {
    for (Modality key : {Modality::kText, Modality::kImage, Modality::kBox, Modality::kCondition}) {
      if (!attention_blocked(mode, layout.modality[i], key)) continue;
      const int lo = layout.offset(key);
      const int hi = key == Modality::kText ? layout.text_len : lo + layout.n;
      T* row = scores + static_cast<std::size_t>(i) * n;
      for (int j = lo; j < hi; ++j) row[j] += static_cast<T>(kMaskedLogit);
    }
  }
}

}  // namespace

template <class T>
void masked_attention(const T* qkv, T* probs, T* out, const SequenceLayout& layout, int d,
                      int heads, MaskMode mask) {
  const int n = layout.total(), hd = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  for (int h = 0; h < heads; ++h) {
    T* s = probs + static_cast<std::size_t>(h) * n * n;
    const T* q = qkv + h * hd;
    const T* kk = qkv + d + h * hd;
    const T* v = qkv + 2 * d + h * hd;
    k::gemm<T>(k::Trans::kNo, k::Trans::kYes, n, n, hd, scale, q, 3 * d, kk, 3 * d, T(0), s, n);
    add_mask(s, layout, mask);
    k::softmax_rows<T>(s, n, n, n);
    k::gemm<T>(k::Trans::kNo, k::Trans::kNo, n, hd, n, T(1), s, n, v, 3 * d, T(0), out + h * hd, d);
  }
}

namespace {

template <class T>
T sigmoid(T u) {
  return T(1) / (T(1) + std::exp(-u));
}

template <class T>
void silu(const T* u, T* s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) s[i] = u[i] * sigmoid(u[i]);
}

template <class T>
T silu_grad(T u) {
  const T sg = sigmoid(u);
  return sg * (T(1) + u * (T(1) - sg));
}

// y = x w + b for x [n x in], w [in x out], b [out] (b may be null).
template <class T>
void linear(const T* x, int n, int in, const T* w, const T* b, int out, T* y) {
  k::gemm<T>(k::Trans::kNo, k::Trans::kNo, n, out, in, T(1), x, in, w, out, T(0), y, out);
  if (b)
    for (int i = 0; i < n; ++i) k::axpy<T>(T(1), b, y + static_cast<std::size_t>(i) * out, out);
}

// Accumulates dw, db; writes (beta=0) or accumulates (beta=1) dx when non-null.
template <class T>
void linear_back(const T* x, const T* dy, int n, int in, int out, const T* w, T* dw, T* db, T* dx,
                 T beta) {
  k::gemm<T>(k::Trans::kYes, k::Trans::kNo, in, out, n, T(1), x, in, dy, out, T(1), dw, out);
  if (db)
    for (int i = 0; i < n; ++i) k::axpy<T>(T(1), dy + static_cast<std::size_t>(i) * out, db, out);
  if (dx) k::gemm<T>(k::Trans::kNo, k::Trans::kYes, n, in, out, T(1), dy, out, w, out, beta, dx, in);
}

// Backward of y = (x - mean) * rstd given xhat = y; adds into dx.
template <class T>
void layernorm_back(const T* xhat, const T* rstd, const T* dy, T* dx, int rows, int d) {
  for (int r = 0; r < rows; ++r) {
    const T* xh = xhat + static_cast<std::size_t>(r) * d;
    const T* g = dy + static_cast<std::size_t>(r) * d;
    T* o = dx + static_cast<std::size_t>(r) * d;
    T mg = T(0), mgx = T(0);
    for (int j = 0; j < d; ++j) {
      mg += g[j];
      mgx += g[j] * xh[j];
    }
    mg /= T(d);
    mgx /= T(d);
    for (int j = 0; j < d; ++j) o[j] += rstd[r] * (g[j] - mg - xh[j] * mgx);
  }
}

// Backward of modulate_rows: accumulates d shift / d scale into dmod and
// writes dx = dy * (1 + scale).
template <class T>
void modulate_back(const T* x, const T* dy, T* dx, const SequenceLayout& layout, int d,
                   const T* mod, T* dmod, int mod_stride, int shift_col, int scale_col) {
  for (int i = 0; i < layout.total(); ++i) {
    const std::size_t m = static_cast<std::size_t>(sequence::index(layout.modality[i])) * mod_stride;
    const T* scale = mod + m + scale_col;
    T* dshift = dmod + m + shift_col;
    T* dscale = dmod + m + scale_col;
    const T* xr = x + static_cast<std::size_t>(i) * d;
    const T* g = dy + static_cast<std::size_t>(i) * d;
    T* o = dx + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      dshift[j] += g[j];
      dscale[j] += g[j] * xr[j];
      o[j] = g[j] * (T(1) + scale[j]);
    }
  }
}

// Backward of gated_residual's update term: d update = gate * dx, d gate += dx * update.
template <class T>
void gate_back(const T* dx, const T* update, T* dupdate, const SequenceLayout& layout, int d,
               const T* mod, T* dmod, int mod_stride, int gate_col) {
  for (int i = 0; i < layout.total(); ++i) {
    const std::size_t m = static_cast<std::size_t>(sequence::index(layout.modality[i])) * mod_stride;
    const T* gate = mod + m + gate_col;
    T* dgate = dmod + m + gate_col;
    const T* g = dx + static_cast<std::size_t>(i) * d;
    const T* u = update + static_cast<std::size_t>(i) * d;
    T* o = dupdate + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      dgate[j] += g[j] * u[j];
      o[j] = gate[j] * g[j];
    }
  }
}

template <class T>
void sinusoid(double t, int dim, T* out, T* dout) {
  const int half = dim / 2;
  for (int j = 0; j < half; ++j) {
    const double w = 1000.0 * std::exp(-std::log(10000.0) * j / half);
    const double a = t * w;
    out[j] = static_cast<T>(std::cos(a));
    out[half + j] = static_cast<T>(std::sin(a));
    if (dout) {
      dout[j] = static_cast<T>(-std::sin(a) * w);
      dout[half + j] = static_cast<T>(std::cos(a) * w);
    }
  }
}

template <class T>
std::vector<T> zeros(std::size_t n) {
  return std::vector<T>(n, T(0));
}

}  // namespace

// ---- model --------------------------------------------------------------------

template <class T>
Model<T>::Model(const ModelConfig& cfg, Init init, std::uint64_t seed)
    : cfg_(cfg), specs_(parameter_layout(cfg)), params_(parameter_count(cfg), T(0)) {
  Rng rng(seed);
  for (const TensorSpec& s : specs_) {
    T* dst = params_.data() + s.offset;
    const bool embedding = s.name == "tok_emb" || s.name == "mod_emb";
    const bool zero_init = init == Init::kAdaLnZero &&
                           (s.name.find("ada.") != std::string::npos || s.name.rfind("head.", 0) == 0);
    if (zero_init) continue;
    double std_dev;
    if (embedding)
      std_dev = 0.5;
    else if (s.is_bias())
      std_dev = init == Init::kRandom ? 0.02 : 0.0;
    else
      std_dev = 1.0 / std::sqrt(static_cast<double>(s.rows));
    if (std_dev == 0.0) continue;
    for (std::size_t i = 0; i < s.size(); ++i) dst[i] = static_cast<T>(rng.normal() * std_dev);
  }
}

template <class T>
const TensorSpec& Model<T>::spec(const std::string& name) const {
  for (const TensorSpec& s : specs_)
    if (s.name == name) return s;
  fail(Errc::kInvalidArgument, "no parameter named " + name);
}

template <class T>
std::span<T> Model<T>::param(const std::string& name) {
  const TensorSpec& s = spec(name);
  return std::span<T>(params_).subspan(s.offset, s.size());
}

template <class T>
std::span<const T> Model<T>::param(const std::string& name) const {
  const TensorSpec& s = spec(name);
  return std::span<const T>(params_).subspan(s.offset, s.size());
}

template <class T>
std::vector<T> Model<T>::text_pool(std::span<const int> prompt) const {
  const int d = cfg_.d_model;
  require(!prompt.empty(), Errc::kConfigMismatch, "prompt must hold at least one token");
  std::vector<T> y(static_cast<std::size_t>(d), T(0));
  const T* table = p("tok_emb");
  for (int tok : prompt) {
    require(tok >= 0 && tok < cfg_.vocab, Errc::kUnknownGlyph,
            "token " + std::to_string(tok) + " outside the vocabulary");
    k::axpy<T>(T(1), table + static_cast<std::size_t>(tok) * d, y.data(), d);
  }
  const T inv = T(1) / static_cast<T>(prompt.size());
  for (auto& v : y) v *= inv;
  return y;
}

template <class T>
std::vector<T> Model<T>::timestep_embed(double t, std::span<const T> y_txt,
                                        std::vector<T>* dh_dt) const {
  const int d = cfg_.d_model;
  std::vector<T> g(d), dg(d), u(d), s(d), h(d), uv(d), sv(d), hv(d);
  sinusoid<T>(t, d, g.data(), dg.data());
  linear(g.data(), 1, d, p("time.w1"), p("time.b1"), d, u.data());
  silu(u.data(), s.data(), u.size());
  linear(s.data(), 1, d, p("time.w2"), p("time.b2"), d, h.data());
  linear(y_txt.data(), 1, d, p("vec.w1"), p("vec.b1"), d, uv.data());
  silu(uv.data(), sv.data(), sv.size());
  linear(sv.data(), 1, d, p("vec.w2"), p("vec.b2"), d, hv.data());
  for (int j = 0; j < d; ++j) h[j] += hv[j];
  if (dh_dt) {
    std::vector<T> du(d), ds(d);
    linear<T>(dg.data(), 1, d, p("time.w1"), nullptr, d, du.data());
    for (int j = 0; j < d; ++j) ds[j] = silu_grad(u[j]) * du[j];
    dh_dt->assign(d, T(0));
    linear<T>(ds.data(), 1, d, p("time.w2"), nullptr, d, dh_dt->data());
  }
  return h;
}

template <class T>
void Model<T>::conditioning(const TimestepTriplet& t, std::span<const int> prompt, Cache<T>& c) const {
  const int d = cfg_.d_model;
  for (double v : {t.img, t.box, t.cond})
    require(v >= 0.0 && v <= 1.0 && std::isfinite(v), Errc::kConfigMismatch,
            "timesteps must lie in [0, 1]");
  c.y_txt = text_pool(prompt);
  const auto ts = timesteps_by_modality(t);
  c.gamma = zeros<T>(4 * static_cast<std::size_t>(d));
  for (int m = 0; m < 4; ++m) sinusoid<T>(ts[m], d, c.gamma.data() + m * d, nullptr);
  c.u_time = zeros<T>(4 * std::size_t(d));
  c.s_time = c.u_time;
  c.h = c.u_time;
  linear(c.gamma.data(), 4, d, p("time.w1"), p("time.b1"), d, c.u_time.data());
  silu(c.u_time.data(), c.s_time.data(), c.s_time.size());
  linear(c.s_time.data(), 4, d, p("time.w2"), p("time.b2"), d, c.h.data());
  c.u_vec = zeros<T>(d);
  c.s_vec = c.u_vec;
  std::vector<T> hv(d);
  linear(c.y_txt.data(), 1, d, p("vec.w1"), p("vec.b1"), d, c.u_vec.data());
  silu(c.u_vec.data(), c.s_vec.data(), c.s_vec.size());
  linear(c.s_vec.data(), 1, d, p("vec.w2"), p("vec.b2"), d, hv.data());
  for (int m = 0; m < 4; ++m) k::axpy<T>(T(1), hv.data(), c.h.data() + m * d, d);
  c.silu_h.resize(c.h.size());
  silu(c.h.data(), c.silu_h.data(), c.h.size());
}

template <class T>
std::vector<T> Model<T>::modulation(int block, const TimestepTriplet& t,
                                    std::span<const int> prompt) const {
  const int d = cfg_.d_model;
  Cache<T> c;
  conditioning(t, prompt, c);
  const std::string pre = "block" + std::to_string(block) + ".";
  std::vector<T> mod(4 * std::size_t(6 * d));
  linear(c.silu_h.data(), 4, d, p(pre + "ada.w"), p(pre + "ada.b"), 6 * d, mod.data());
  return mod;
}

template <class T>
Outputs<T> Model<T>::forward(const Inputs<T>& in, Cache<T>* cache) const {
  const ModelConfig& c = cfg_;
  const int d = c.d_model, hid = c.hidden(), heads = c.n_heads, hd = c.head_dim();
  const int n = c.n_patches(), gd = c.gray_dim(), bd = c.box_dim();
  require(in.img.size() == std::size_t(n) * gd && in.cond.size() == std::size_t(n) * gd &&
              in.box.size() == std::size_t(n) * bd,
          Errc::kConfigMismatch, "stream inputs do not match the model configuration");
  Cache<T> local;
  Cache<T>& cc = cache ? *cache : local;
  cc.prompt.assign(in.prompt.begin(), in.prompt.end());
  cc.img.assign(in.img.begin(), in.img.end());
  cc.box.assign(in.box.begin(), in.box.end());
  cc.cond.assign(in.cond.begin(), in.cond.end());

  const sequence::EmbeddingView<T> emb{p("tok_emb"), c.vocab, p("w_in"), c.in_dim(), p("mod_emb"), d};
  auto seq = sequence::assemble_sequence<T>(in.prompt, in.img, in.box, in.cond, gd, bd, emb, c.max_text);
  cc.layout = seq.layout;
  cc.rope = sequence::RopeTable(cc.layout.modality, cc.layout.coords, hd);
  conditioning(in.t, in.prompt, cc);

  const int tn = cc.layout.total();
  const std::size_t td = std::size_t(tn) * d;
  std::vector<T> x = std::move(seq.tokens);
  cc.blocks.resize(static_cast<std::size_t>(c.n_blocks));
  for (int b = 0; b < c.n_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    BlockCache<T>& bc = cc.blocks[static_cast<std::size_t>(b)];
    bc.x_in = x;
    bc.mod.assign(4 * std::size_t(6 * d), T(0));
    linear(cc.silu_h.data(), 4, d, p(pre + "ada.w"), p(pre + "ada.b"), 6 * d, bc.mod.data());

    bc.ln1.resize(td);
    bc.mean1.resize(tn);
    bc.rstd1.resize(tn);
    k::layernorm_rows<T>(x.data(), bc.ln1.data(), bc.mean1.data(), bc.rstd1.data(), tn, d,
                         static_cast<T>(kLayerNormEps));
    bc.a1.resize(td);
    modulate_rows(bc.ln1.data(), bc.a1.data(), cc.layout, d, bc.mod.data(), 6 * d, 0, d);
    bc.qkv.resize(td * 3);
    linear(bc.a1.data(), tn, d, p(pre + "qkv.w"), p(pre + "qkv.b"), 3 * d, bc.qkv.data());
    for (int i = 0; i < tn; ++i)
      for (int h = 0; h < heads; ++h) {
        T* row = bc.qkv.data() + std::size_t(i) * 3 * d;
        cc.rope.apply(row + h * hd, i);
        cc.rope.apply(row + d + h * hd, i);
      }
    bc.probs.resize(std::size_t(heads) * tn * tn);
    bc.attn.resize(td);
    masked_attention(bc.qkv.data(), bc.probs.data(), bc.attn.data(), cc.layout, d, heads, c.mask);
    bc.o.resize(td);
    linear(bc.attn.data(), tn, d, p(pre + "proj.w"), p(pre + "proj.b"), d, bc.o.data());
    gated_residual(x.data(), bc.o.data(), cc.layout, d, bc.mod.data(), 6 * d, 2 * d);

    bc.x_mid = x;
    bc.ln2.resize(td);
    bc.mean2.resize(tn);
    bc.rstd2.resize(tn);
    k::layernorm_rows<T>(x.data(), bc.ln2.data(), bc.mean2.data(), bc.rstd2.data(), tn, d,
                         static_cast<T>(kLayerNormEps));
    bc.a2.resize(td);
    modulate_rows(bc.ln2.data(), bc.a2.data(), cc.layout, d, bc.mod.data(), 6 * d, 3 * d, 4 * d);
    bc.f1.resize(std::size_t(tn) * hid);
    linear(bc.a2.data(), tn, d, p(pre + "fc1.w"), p(pre + "fc1.b"), hid, bc.f1.data());
    bc.g1.resize(bc.f1.size());
    k::gelu<T>(bc.f1.data(), bc.g1.data(), bc.f1.size());
    bc.f.resize(td);
    linear(bc.g1.data(), tn, hid, p(pre + "fc2.w"), p(pre + "fc2.b"), d, bc.f.data());
    gated_residual(x.data(), bc.f.data(), cc.layout, d, bc.mod.data(), 6 * d, 5 * d);
  }
  cc.x_out = x;
  cc.fin.assign(4 * std::size_t(2 * d), T(0));
  linear(cc.silu_h.data(), 4, d, p("final.ada.w"), p("final.ada.b"), 2 * d, cc.fin.data());
  cc.lnf.resize(td);
  cc.meanf.resize(tn);
  cc.rstdf.resize(tn);
  k::layernorm_rows<T>(x.data(), cc.lnf.data(), cc.meanf.data(), cc.rstdf.data(), tn, d,
                       static_cast<T>(kLayerNormEps));
  cc.xf.resize(td);
  modulate_rows(cc.lnf.data(), cc.xf.data(), cc.layout, d, cc.fin.data(), 2 * d, 0, d);

  Outputs<T> out;
  auto head = [&](Modality m, const char* name, std::vector<T>& dst) {
    const int width = c.stream_dim(m);
    dst.assign(std::size_t(n) * width, T(0));
    const T* rows = cc.xf.data() + std::size_t(cc.layout.offset(m)) * d;
    linear(rows, n, d, p(std::string("head.") + name + ".w"), p(std::string("head.") + name + ".b"),
           width, dst.data());
  };
  head(Modality::kImage, "img", out.img);
  head(Modality::kBox, "box", out.box);
  head(Modality::kCondition, "cond", out.cond);
  return out;
}

template <class T>
void Model<T>::backward(const Cache<T>& cc, const Outputs<T>& d_out, std::span<T> grad) const {
  const ModelConfig& c = cfg_;
  require(grad.size() == params_.size(), Errc::kConfigMismatch, "gradient buffer size mismatch");
  const int d = c.d_model, hid = c.hidden(), heads = c.n_heads, hd = c.head_dim();
  const int n = c.n_patches();
  const SequenceLayout& lay = cc.layout;
  const int tn = lay.total();
  const std::size_t td = std::size_t(tn) * d;
  auto g = [&](const std::string& name) { return grad.data() + offset(name); };

  std::vector<T> dxf = zeros<T>(td);
  auto head_back = [&](Modality m, const char* name, const std::vector<T>& dy) {
    const int width = c.stream_dim(m);
    require(dy.size() == std::size_t(n) * width, Errc::kConfigMismatch,
            "output gradient does not match the stream");
    const std::size_t row0 = std::size_t(lay.offset(m)) * d;
    const std::string base = std::string("head.") + name;
    linear_back(cc.xf.data() + row0, dy.data(), n, d, width, p(base + ".w"), g(base + ".w"),
                g(base + ".b"), dxf.data() + row0, T(0));
  };
  head_back(Modality::kImage, "img", d_out.img);
  head_back(Modality::kBox, "box", d_out.box);
  head_back(Modality::kCondition, "cond", d_out.cond);

  std::vector<T> dsilu = zeros<T>(4 * std::size_t(d));
  std::vector<T> dfin = zeros<T>(4 * std::size_t(2 * d));
  std::vector<T> tmp(td), dx = zeros<T>(td);
  modulate_back(cc.lnf.data(), dxf.data(), tmp.data(), lay, d, cc.fin.data(), dfin.data(), 2 * d, 0, d);
  layernorm_back(cc.lnf.data(), cc.rstdf.data(), tmp.data(), dx.data(), tn, d);
  linear_back(cc.silu_h.data(), dfin.data(), 4, d, 2 * d, p("final.ada.w"), g("final.ada.w"),
              g("final.ada.b"), dsilu.data(), T(1));

  std::vector<T> dmod, dupd(td), dg1(std::size_t(tn) * hid), df1(dg1.size()), da(td),
      dattn(td), dqkv(td * 3), dp(std::size_t(tn) * tn);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  for (int b = c.n_blocks - 1; b >= 0; --b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    const BlockCache<T>& bc = cc.blocks[static_cast<std::size_t>(b)];
    dmod.assign(4 * std::size_t(6 * d), T(0));

    // MLP branch: x_out = x_mid + gate2 * f.
    gate_back(dx.data(), bc.f.data(), dupd.data(), lay, d, bc.mod.data(), dmod.data(), 6 * d, 5 * d);
    linear_back(bc.g1.data(), dupd.data(), tn, hid, d, p(pre + "fc2.w"), g(pre + "fc2.w"),
                g(pre + "fc2.b"), dg1.data(), T(0));
    k::gelu_backward<T>(bc.f1.data(), dg1.data(), df1.data(), df1.size());
    linear_back(bc.a2.data(), df1.data(), tn, d, hid, p(pre + "fc1.w"), g(pre + "fc1.w"),
                g(pre + "fc1.b"), da.data(), T(0));
    modulate_back(bc.ln2.data(), da.data(), tmp.data(), lay, d, bc.mod.data(), dmod.data(), 6 * d,
                  3 * d, 4 * d);
    layernorm_back(bc.ln2.data(), bc.rstd2.data(), tmp.data(), dx.data(), tn, d);

    // Attention branch: x_mid = x_in + gate1 * o.
    gate_back(dx.data(), bc.o.data(), dupd.data(), lay, d, bc.mod.data(), dmod.data(), 6 * d, 2 * d);
    linear_back(bc.attn.data(), dupd.data(), tn, d, d, p(pre + "proj.w"), g(pre + "proj.w"),
                g(pre + "proj.b"), dattn.data(), T(0));
    for (int h = 0; h < heads; ++h) {
      const T* P = bc.probs.data() + std::size_t(h) * tn * tn;
      const T* q = bc.qkv.data() + h * hd;
      const T* kk = bc.qkv.data() + d + h * hd;
      const T* v = bc.qkv.data() + 2 * d + h * hd;
      const T* d_o = dattn.data() + h * hd;
      T* dq = dqkv.data() + h * hd;
      T* dk = dqkv.data() + d + h * hd;
      T* dv = dqkv.data() + 2 * d + h * hd;
      k::gemm<T>(k::Trans::kNo, k::Trans::kYes, tn, tn, hd, T(1), d_o, d, v, 3 * d, T(0), dp.data(), tn);
      k::gemm<T>(k::Trans::kYes, k::Trans::kNo, tn, hd, tn, T(1), P, tn, d_o, d, T(0), dv, 3 * d);
      for (int i = 0; i < tn; ++i) {
        T* row = dp.data() + std::size_t(i) * tn;
        const T* pr = P + std::size_t(i) * tn;
        const T dotv = k::dot<T>(row, pr, tn);
        for (int j = 0; j < tn; ++j) row[j] = pr[j] * (row[j] - dotv);
      }
      k::gemm<T>(k::Trans::kNo, k::Trans::kNo, tn, hd, tn, scale, dp.data(), tn, kk, 3 * d, T(0), dq, 3 * d);
      k::gemm<T>(k::Trans::kYes, k::Trans::kNo, tn, hd, tn, scale, dp.data(), tn, q, 3 * d, T(0), dk, 3 * d);
    }
    for (int i = 0; i < tn; ++i)
      for (int h = 0; h < heads; ++h) {
        T* row = dqkv.data() + std::size_t(i) * 3 * d;
        cc.rope.apply(row + h * hd, i, true);
        cc.rope.apply(row + d + h * hd, i, true);
      }
    linear_back(bc.a1.data(), dqkv.data(), tn, d, 3 * d, p(pre + "qkv.w"), g(pre + "qkv.w"),
                g(pre + "qkv.b"), da.data(), T(0));
    modulate_back(bc.ln1.data(), da.data(), tmp.data(), lay, d, bc.mod.data(), dmod.data(), 6 * d, 0, d);
    layernorm_back(bc.ln1.data(), bc.rstd1.data(), tmp.data(), dx.data(), tn, d);

    linear_back(cc.silu_h.data(), dmod.data(), 4, d, 6 * d, p(pre + "ada.w"), g(pre + "ada.w"),
                g(pre + "ada.b"), dsilu.data(), T(1));
  }

  // Token embeddings.
  T* gtok = g("tok_emb");
  for (int i = 0; i < lay.text_len; ++i)
    k::axpy<T>(T(1), dx.data() + std::size_t(i) * d, gtok + std::size_t(cc.prompt[i]) * d, d);
  auto input_back = [&](Modality m, int stream, const std::vector<T>& patches) {
    const int width = c.stream_dim(m);
    const T* rows = dx.data() + std::size_t(lay.offset(m)) * d;
    k::gemm<T>(k::Trans::kYes, k::Trans::kNo, width, d, n, T(1), patches.data(), width, rows, d,
               T(1), g("w_in"), d);
    T* ge = g("mod_emb") + std::size_t(stream) * d;
    for (int r = 0; r < n; ++r) k::axpy<T>(T(1), rows + std::size_t(r) * d, ge, d);
  };
  input_back(Modality::kImage, 0, cc.img);
  input_back(Modality::kBox, 1, cc.box);
  input_back(Modality::kCondition, 2, cc.cond);

  // Conditioning MLPs.
  std::vector<T> dh(dsilu.size());
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] = dsilu[i] * silu_grad(cc.h[i]);
  std::vector<T> ds(dh.size());
  linear_back(cc.s_time.data(), dh.data(), 4, d, d, p("time.w2"), g("time.w2"), g("time.b2"),
              ds.data(), T(0));
  for (std::size_t i = 0; i < ds.size(); ++i) ds[i] *= silu_grad(cc.u_time[i]);
  linear_back<T>(cc.gamma.data(), ds.data(), 4, d, d, p("time.w1"), g("time.w1"), g("time.b1"),
                 nullptr, T(0));
  std::vector<T> dhv = zeros<T>(d), dsv(d), dy(d);
  for (int m = 0; m < 4; ++m) k::axpy<T>(T(1), dh.data() + m * d, dhv.data(), d);
  linear_back(cc.s_vec.data(), dhv.data(), 1, d, d, p("vec.w2"), g("vec.w2"), g("vec.b2"),
              dsv.data(), T(0));
  for (int j = 0; j < d; ++j) dsv[j] *= silu_grad(cc.u_vec[j]);
  linear_back(cc.y_txt.data(), dsv.data(), 1, d, d, p("vec.w1"), g("vec.w1"), g("vec.b1"), dy.data(),
              T(0));
  const T inv = T(1) / static_cast<T>(cc.prompt.size());
  for (int tok : cc.prompt) k::axpy<T>(inv, dy.data(), gtok + std::size_t(tok) * d, d);
}

#define GF_INSTANTIATE(T)                                                                       \
  template class Model<T>;                                                                      \
  template void modulate_rows<T>(const T*, T*, const SequenceLayout&, int, const T*, int, int, \
                                 int);                                                          \
  template void gated_residual<T>(T*, const T*, const SequenceLayout&, int, const T*, int, int); \
  template void masked_attention<T>(const T*, T*, T*, const SequenceLayout&, int, int, MaskMode);
GF_INSTANTIATE(float)
GF_INSTANTIATE(double)
#undef GF_INSTANTIATE

}  // namespace gf::backbone
