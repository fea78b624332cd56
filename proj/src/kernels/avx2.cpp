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

// AVX2 + FMA float kernels. This translation unit is compiled with
// -mavx2 -mfma and is only entered after a CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <vector>

#include "glyphflow/kernels/kernels.hpp"
#include "glyphflow/kernels/reference.hpp"

namespace gf::kernels::avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

inline float hmax(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_max_ps(lo, hi);
  lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_max_ss(lo, _mm_movehdup_ps(lo));
  return _mm_cvtss_f32(lo);
}

// Cephes-style exp. Inputs below -87.3 flush to exactly zero so masked
// attention logits contribute nothing.
inline __m256 exp_ps(__m256 x) {
  const __m256 underflow = _mm256_cmp_ps(x, _mm256_set1_ps(-87.3f), _CMP_LT_OQ);
  x = _mm256_min_ps(x, _mm256_set1_ps(88.3762626647949f));
  x = _mm256_max_ps(x, _mm256_set1_ps(-88.3762626647949f));
  __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f), _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);
  __m256 y = _mm256_set1_ps(1.9875691500E-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507E-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073E-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894E-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459E-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201E-1f));
  const __m256 x2 = _mm256_mul_ps(x, x);
  y = _mm256_fmadd_ps(y, x2, _mm256_add_ps(x, _mm256_set1_ps(1.0f)));
  __m256i e = _mm256_cvttps_epi32(fx);
  e = _mm256_add_epi32(e, _mm256_set1_epi32(127));
  e = _mm256_slli_epi32(e, 23);
  y = _mm256_mul_ps(y, _mm256_castsi256_ps(e));
  return _mm256_andnot_ps(underflow, y);
}

inline __m256 tanh_ps(__m256 u) {
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 e = exp_ps(_mm256_add_ps(u, u));
  return _mm256_sub_ps(one, _mm256_div_ps(_mm256_set1_ps(2.0f), _mm256_add_ps(e, one)));
}

// ---------------------------------------------------------------------------
// GEMM: packed panels, 6x16 register tile.

constexpr int kMR = 6;
constexpr int kNR = 16;
constexpr int kKC = 256;
constexpr int kMC = 96;
constexpr int kNC = 1024;

struct AlignedBuffer {
  float* ptr = nullptr;
  std::size_t size = 0;
  ~AlignedBuffer() { std::free(ptr); }
  float* get(std::size_t n) {
    if (n > size) {
      std::free(ptr);
      ptr = static_cast<float*>(std::aligned_alloc(64, ((n * sizeof(float) + 63) / 64) * 64));
      size = n;
    }
    return ptr;
  }
};

void pack_a(Trans ta, const float* a, int lda, int i0, int p0, int mc, int kc, float alpha,
            float* dst) {
  for (int ir = 0; ir < mc; ir += kMR) {
    const int mr = std::min(kMR, mc - ir);
    for (int p = 0; p < kc; ++p) {
      for (int i = 0; i < kMR; ++i) {
        float v = 0.0f;
        if (i < mr) {
          const int row = i0 + ir + i, col = p0 + p;
          v = ta == Trans::kNo ? a[static_cast<std::ptrdiff_t>(row) * lda + col]
                               : a[static_cast<std::ptrdiff_t>(col) * lda + row];
          v *= alpha;
        }
        *dst++ = v;
      }
    }
  }
}

void pack_b(Trans tb, const float* b, int ldb, int p0, int j0, int kc, int nc, float* dst) {
  for (int jr = 0; jr < nc; jr += kNR) {
    const int nr = std::min(kNR, nc - jr);
    if (tb == Trans::kNo && nr == kNR) {
      for (int p = 0; p < kc; ++p) {
        const float* src = b + static_cast<std::ptrdiff_t>(p0 + p) * ldb + j0 + jr;
        _mm256_store_ps(dst, _mm256_loadu_ps(src));
        _mm256_store_ps(dst + 8, _mm256_loadu_ps(src + 8));
        dst += kNR;
      }
      continue;
    }
    for (int p = 0; p < kc; ++p) {
      for (int j = 0; j < kNR; ++j) {
        float v = 0.0f;
        if (j < nr) {
          const int row = p0 + p, col = j0 + jr + j;
          v = tb == Trans::kNo ? b[static_cast<std::ptrdiff_t>(row) * ldb + col]
                               : b[static_cast<std::ptrdiff_t>(col) * ldb + row];
        }
        *dst++ = v;
      }
    }
  }
}

void micro_kernel(int kc, const float* pa, const float* pb, float* c, int ldc, int mr, int nr) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (int p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_load_ps(pb);
    const __m256 b1 = _mm256_load_ps(pb + 8);
    __m256 a = _mm256_broadcast_ss(pa + 0);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(pa + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(pa + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(pa + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(pa + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(pa + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    pa += kMR;
    pb += kNR;
  }
  alignas(32) float tile[kMR * kNR];
  _mm256_store_ps(tile + 0 * kNR, c00);
  _mm256_store_ps(tile + 0 * kNR + 8, c01);
  _mm256_store_ps(tile + 1 * kNR, c10);
  _mm256_store_ps(tile + 1 * kNR + 8, c11);
  _mm256_store_ps(tile + 2 * kNR, c20);
  _mm256_store_ps(tile + 2 * kNR + 8, c21);
  _mm256_store_ps(tile + 3 * kNR, c30);
  _mm256_store_ps(tile + 3 * kNR + 8, c31);
  _mm256_store_ps(tile + 4 * kNR, c40);
  _mm256_store_ps(tile + 4 * kNR + 8, c41);
  _mm256_store_ps(tile + 5 * kNR, c50);
  _mm256_store_ps(tile + 5 * kNR + 8, c51);
  if (nr == kNR) {
    for (int i = 0; i < mr; ++i) {
      float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
      _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), _mm256_load_ps(tile + i * kNR)));
      _mm256_storeu_ps(crow + 8,
                       _mm256_add_ps(_mm256_loadu_ps(crow + 8), _mm256_load_ps(tile + i * kNR + 8)));
    }
  } else {
    for (int i = 0; i < mr; ++i) {
      float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
      for (int j = 0; j < nr; ++j) crow[j] += tile[i * kNR + j];
    }
  }
}

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.0f)
      std::memset(crow, 0, sizeof(float) * static_cast<std::size_t>(n));
    else if (beta != 1.0f)
      for (int j = 0; j < n; ++j) crow[j] *= beta;
  }
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0f) return;

  thread_local AlignedBuffer buf_a, buf_b;
  float* pa = buf_a.get(static_cast<std::size_t>(kMC + kMR) * kKC);
  float* pb = buf_b.get(static_cast<std::size_t>(kNC + kNR) * kKC);

  for (int jc = 0; jc < n; jc += kNC) {
    const int nc = std::min(kNC, n - jc);
    for (int pc = 0; pc < k; pc += kKC) {
      const int kc = std::min(kKC, k - pc);
      pack_b(tb, b, ldb, pc, jc, kc, nc, pb);
      for (int ic = 0; ic < m; ic += kMC) {
        const int mc = std::min(kMC, m - ic);
        pack_a(ta, a, lda, ic, pc, mc, kc, alpha, pa);
        for (int jr = 0; jr < nc; jr += kNR) {
          const int nr = std::min(kNR, nc - jr);
          for (int ir = 0; ir < mc; ir += kMR) {
            const int mr = std::min(kMR, mc - ir);
            micro_kernel(kc, pa + static_cast<std::ptrdiff_t>(ir) * kc,
                         pb + static_cast<std::ptrdiff_t>(jr) * kc,
                         c + static_cast<std::ptrdiff_t>(ic + ir) * ldc + jc + jr, ldc, mr, nr);
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

void softmax_rows(float* x, int rows, int cols, int stride) {
  for (int r = 0; r < rows; ++r) {
    float* row = x + static_cast<std::ptrdiff_t>(r) * stride;
    int j = 0;
    __m256 vmax = _mm256_set1_ps(-INFINITY);
    for (; j + 8 <= cols; j += 8) vmax = _mm256_max_ps(vmax, _mm256_loadu_ps(row + j));
    float mx = hmax(vmax);
    for (; j < cols; ++j) mx = std::max(mx, row[j]);
    const __m256 vm = _mm256_set1_ps(mx);
    __m256 vsum = _mm256_setzero_ps();
    j = 0;
    for (; j + 8 <= cols; j += 8) {
      const __m256 e = exp_ps(_mm256_sub_ps(_mm256_loadu_ps(row + j), vm));
      _mm256_storeu_ps(row + j, e);
      vsum = _mm256_add_ps(vsum, e);
    }
    float sum = hsum(vsum);
    if (j < cols) {
      alignas(32) float tail[8];
      const int rem = cols - j;
      for (int t = 0; t < 8; ++t) tail[t] = t < rem ? row[j + t] - mx : -INFINITY;
      const __m256 e = exp_ps(_mm256_load_ps(tail));
      _mm256_store_ps(tail, e);
      for (int t = 0; t < rem; ++t) {
        row[j + t] = tail[t];
        sum += tail[t];
      }
    }
    const __m256 inv = _mm256_set1_ps(1.0f / sum);
    j = 0;
    for (; j + 8 <= cols; j += 8) _mm256_storeu_ps(row + j, _mm256_mul_ps(_mm256_loadu_ps(row + j), inv));
    for (; j < cols; ++j) row[j] *= 1.0f / sum;
  }
}

void layernorm_rows(const float* x, float* y, float* mean, float* rstd, int rows, int cols,
                    float eps) {
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + static_cast<std::ptrdiff_t>(r) * cols;
    float* yr = y + static_cast<std::ptrdiff_t>(r) * cols;
    __m256 acc = _mm256_setzero_ps();
    int j = 0;
    for (; j + 8 <= cols; j += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(xr + j));
    float s = hsum(acc);
    for (; j < cols; ++j) s += xr[j];
    const float mu = s / static_cast<float>(cols);
    const __m256 vmu = _mm256_set1_ps(mu);
    acc = _mm256_setzero_ps();
    j = 0;
    for (; j + 8 <= cols; j += 8) {
      const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(xr + j), vmu);
      acc = _mm256_fmadd_ps(d, d, acc);
    }
    float var = hsum(acc);
    for (; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<float>(cols);
    const float rs = 1.0f / std::sqrt(var + eps);
    const __m256 vrs = _mm256_set1_ps(rs);
    j = 0;
    for (; j + 8 <= cols; j += 8)
      _mm256_storeu_ps(yr + j, _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(xr + j), vmu), vrs));
    for (; j < cols; ++j) yr[j] = (xr[j] - mu) * rs;
    mean[r] = mu;
    rstd[r] = rs;
  }
}

void gelu(const float* x, float* y, std::size_t n) {
  const __m256 c = _mm256_set1_ps(static_cast<float>(ref::kGeluC));
  const __m256 ca = _mm256_set1_ps(static_cast<float>(ref::kGeluC * ref::kGeluA));
  const __m256 half = _mm256_set1_ps(0.5f), one = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 v2 = _mm256_mul_ps(v, v);
    const __m256 u = _mm256_mul_ps(v, _mm256_fmadd_ps(ca, v2, c));
    const __m256 th = tanh_ps(u);
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_mul_ps(half, v), _mm256_add_ps(one, th)));
  }
  if (i < n) ref::gelu<float>(x + i, y + i, n - i);
}

void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
  const __m256 c = _mm256_set1_ps(static_cast<float>(ref::kGeluC));
  const __m256 ca = _mm256_set1_ps(static_cast<float>(ref::kGeluC * ref::kGeluA));
  const __m256 c3a = _mm256_set1_ps(static_cast<float>(3.0 * ref::kGeluC * ref::kGeluA));
  const __m256 half = _mm256_set1_ps(0.5f), one = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 v2 = _mm256_mul_ps(v, v);
    const __m256 u = _mm256_mul_ps(v, _mm256_fmadd_ps(ca, v2, c));
    const __m256 th = tanh_ps(u);
    const __m256 du = _mm256_fmadd_ps(c3a, v2, c);
    const __m256 sech2 = _mm256_fnmadd_ps(th, th, one);
    const __m256 left = _mm256_mul_ps(half, _mm256_add_ps(one, th));
    const __m256 right = _mm256_mul_ps(_mm256_mul_ps(half, v), _mm256_mul_ps(sech2, du));
    _mm256_storeu_ps(dx + i, _mm256_mul_ps(_mm256_loadu_ps(dy + i), _mm256_add_ps(left, right)));
  }
  if (i < n) ref::gelu_backward<float>(x + i, dy + i, dx + i, n - i);
}

void adamw(float* param, const float* grad, float* m, float* v, std::size_t n,
           const AdamWParams& p) {
  const __m256 b1 = _mm256_set1_ps(static_cast<float>(p.beta1));
  const __m256 b2 = _mm256_set1_ps(static_cast<float>(p.beta2));
  const __m256 omb1 = _mm256_set1_ps(1.0f - static_cast<float>(p.beta1));
  const __m256 omb2 = _mm256_set1_ps(1.0f - static_cast<float>(p.beta2));
  const __m256 inv_bc1 = _mm256_set1_ps(1.0f / static_cast<float>(p.bias_corr1));
  const __m256 inv_bc2 = _mm256_set1_ps(1.0f / static_cast<float>(p.bias_corr2));
  const __m256 eps = _mm256_set1_ps(static_cast<float>(p.eps));
  const __m256 lr = _mm256_set1_ps(static_cast<float>(p.lr));
  const __m256 decay = _mm256_set1_ps(1.0f - static_cast<float>(p.lr * p.weight_decay));
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grad + i);
    const __m256 mi = _mm256_fmadd_ps(b1, _mm256_loadu_ps(m + i), _mm256_mul_ps(omb1, g));
    const __m256 vi =
        _mm256_fmadd_ps(b2, _mm256_loadu_ps(v + i), _mm256_mul_ps(omb2, _mm256_mul_ps(g, g)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 mh = _mm256_mul_ps(mi, inv_bc1);
    const __m256 vh = _mm256_mul_ps(vi, inv_bc2);
    const __m256 step = _mm256_div_ps(mh, _mm256_add_ps(_mm256_sqrt_ps(vh), eps));
    const __m256 pi = _mm256_mul_ps(_mm256_loadu_ps(param + i), decay);
    _mm256_storeu_ps(param + i, _mm256_fnmadd_ps(lr, step, pi));
  }
  if (i < n) ref::adamw<float>(param + i, grad + i, m + i, v + i, n - i, p);
}

float dot(const float* x, const float* y, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps(), acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(float a, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

const KernelTable kTable{Isa::kAvx2, gemm,  softmax_rows, layernorm_rows, gelu,
                         gelu_backward, adamw, dot,          axpy};

}  // namespace

const KernelTable& table() { return kTable; }

}  // namespace gf::kernels::avx2
