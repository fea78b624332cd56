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

// Numeric inner loops used by the backbone and the optimizer.
//
// Every kernel has a scalar reference (templated, see reference.hpp) and,
// for float, an optional AVX2+FMA variant. The float entry points below
// dispatch through a table chosen once at startup from CPUID; the
// GLYPHFLOW_KERNELS environment variable ("scalar" or "avx2") overrides
// the choice. Double precision always runs the reference path.

#include <cstddef>
#include <string_view>

namespace gf::kernels {

enum class Trans { kNo, kYes };
enum class Isa { kScalar, kAvx2 };

std::string_view to_string(Isa isa);

struct AdamWParams {
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // 1 - beta^step, precomputed by the caller.
  double bias_corr1 = 1.0;
  double bias_corr2 = 1.0;
};

struct KernelTable {
  Isa isa;
  // C = alpha * op(A) * op(B) + beta * C, row-major. op(A) is m x k, op(B) is k x n.
  void (*gemm)(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
               const float* b, int ldb, float beta, float* c, int ldc);
  // Row-wise softmax in place; row r starts at x + r * stride.
  void (*softmax_rows)(float* x, int rows, int cols, int stride);
  // y = (x - mean) * rstd per row, no affine. mean/rstd receive per-row stats.
  void (*layernorm_rows)(const float* x, float* y, float* mean, float* rstd, int rows, int cols,
                         float eps);
  // tanh-approximated GELU and its input gradient dx = dy * gelu'(x).
  void (*gelu)(const float* x, float* y, std::size_t n);
  void (*gelu_backward)(const float* x, const float* dy, float* dx, std::size_t n);
  void (*adamw)(float* param, const float* grad, float* m, float* v, std::size_t n,
                const AdamWParams& p);
  float (*dot)(const float* x, const float* y, std::size_t n);
  // y += a * x
  void (*axpy)(float a, const float* x, float* y, std::size_t n);
};

const KernelTable& scalar_table();
// Null when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();
bool cpu_supports_avx2();

const KernelTable& active();
// Switches the process-wide table. Throws gf::Error if the ISA is unavailable.
void select(Isa isa);

}  // namespace gf::kernels
