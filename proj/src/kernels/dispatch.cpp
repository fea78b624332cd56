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

#include <atomic>
#include <cstdlib>
#include <string>

#include "glyphflow/common/error.hpp"
#include "glyphflow/kernels/kernels.hpp"
#include "glyphflow/kernels/reference.hpp"

namespace gf::kernels {

#if defined(GLYPHFLOW_HAVE_AVX2)
namespace avx2 {
const KernelTable& table();
}
#endif

std::string_view to_string(Isa isa) { return isa == Isa::kScalar ? "scalar" : "avx2"; }

namespace {

void gemm_scalar(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  ref::gemm<float>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void softmax_scalar(float* x, int rows, int cols, int stride) {
  ref::softmax_rows<float>(x, rows, cols, stride);
}
void layernorm_scalar(const float* x, float* y, float* mean, float* rstd, int rows, int cols,
                      float eps) {
  ref::layernorm_rows<float>(x, y, mean, rstd, rows, cols, eps);
}
void gelu_scalar(const float* x, float* y, std::size_t n) { ref::gelu<float>(x, y, n); }
void gelu_backward_scalar(const float* x, const float* dy, float* dx, std::size_t n) {
  ref::gelu_backward<float>(x, dy, dx, n);
}
void adamw_scalar(float* p, const float* g, float* m, float* v, std::size_t n,
                  const AdamWParams& params) {
  ref::adamw<float>(p, g, m, v, n, params);
}
float dot_scalar(const float* x, const float* y, std::size_t n) { return ref::dot<float>(x, y, n); }
void axpy_scalar(float a, const float* x, float* y, std::size_t n) { ref::axpy<float>(a, x, y, n); }

const KernelTable kScalar{Isa::kScalar,   gemm_scalar,          softmax_scalar,
                          layernorm_scalar, gelu_scalar,        gelu_backward_scalar,
                          adamw_scalar,   dot_scalar,           axpy_scalar};

const KernelTable* initial_table() {
  const KernelTable* best = avx2_table();
  if (const char* env = std::getenv("GLYPHFLOW_KERNELS")) {
    const std::string choice(env);
    if (choice == "scalar") return &kScalar;
    if (choice == "avx2" && best) return best;
  }
  return best ? best : &kScalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* avx2_table() {
#if defined(GLYPHFLOW_HAVE_AVX2)
  if (cpu_supports_avx2()) return &avx2::table();
#endif
  return nullptr;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Isa isa) {
  if (isa == Isa::kScalar) {
    current().store(&kScalar, std::memory_order_release);
    return;
  }
  const KernelTable* t = avx2_table();
  require(t != nullptr, Errc::kInvalidArgument, "AVX2 kernels unavailable on this build or CPU");
  current().store(t, std::memory_order_release);
}

}  // namespace gf::kernels
