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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <type_traits>

#include "glyphflow/kernels/kernels.hpp"

namespace gf::kernels::ref {

template <class T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == T(0))
      std::fill(crow, crow + n, T(0));
    else if (beta != T(1))
      for (int j = 0; j < n; ++j) crow[j] *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;
  auto a_at = [&](int i, int p) {
    return ta == Trans::kNo ? a[static_cast<std::ptrdiff_t>(i) * lda + p]
                            : a[static_cast<std::ptrdiff_t>(p) * lda + i];
  };
  if (tb == Trans::kNo) {
    for (int i = 0; i < m; ++i) {
      T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
      for (int p = 0; p < k; ++p) {
        const T av = alpha * a_at(i, p);
        const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
      for (int j = 0; j < n; ++j) {
        const T* bcol = b + static_cast<std::ptrdiff_t>(j) * ldb;
        T acc = T(0);
        for (int p = 0; p < k; ++p) acc += a_at(i, p) * bcol[p];
        crow[j] += alpha * acc;
      }
    }
  }
}

template <class T>
void softmax_rows(T* x, int rows, int cols, int stride) {
  for (int r = 0; r < rows; ++r) {
    T* row = x + static_cast<std::ptrdiff_t>(r) * stride;
    const T mx = *std::max_element(row, row + cols);
    T sum = T(0);
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < cols; ++j) row[j] *= inv;
  }
}

template <class T>
void layernorm_rows(const T* x, T* y, T* mean, T* rstd, int rows, int cols, T eps) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::ptrdiff_t>(r) * cols;
    T* yr = y + static_cast<std::ptrdiff_t>(r) * cols;
    T mu = T(0);
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= T(cols);
    T var = T(0);
    for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(cols);
    const T rs = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs;
    mean[r] = mu;
    rstd[r] = rs;
  }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluA = 0.044715;

template <class T>
void gelu(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    const T u = T(kGeluC) * (v + T(kGeluA) * v * v * v);
    y[i] = T(0.5) * v * (T(1) + std::tanh(u));
  }
}

template <class T>
void gelu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    const T u = T(kGeluC) * (v + T(kGeluA) * v * v * v);
    const T th = std::tanh(u);
    const T du = T(kGeluC) * (T(1) + T(3 * kGeluA) * v * v);
    dx[i] = dy[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
  }
}

template <class T>
void adamw(T* param, const T* grad, T* m, T* v, std::size_t n, const AdamWParams& p) {
  const T lr = T(p.lr), b1 = T(p.beta1), b2 = T(p.beta2), eps = T(p.eps);
  const T decay = T(1) - T(p.lr * p.weight_decay);
  const T bc1 = T(p.bias_corr1), bc2 = T(p.bias_corr2);
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T mh = m[i] / bc1;
    const T vh = v[i] / bc2;
    param[i] = param[i] * decay - lr * mh / (std::sqrt(vh) + eps);
  }
}

template <class T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class T>
void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace gf::kernels::ref

namespace gf::kernels {

// Precision-generic front ends used by model code.
template <class T>
inline void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda,
                 const T* b, int ldb, T beta, T* c, int ldc) {
  if constexpr (std::is_same_v<T, float>)
    active().gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  else
    ref::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <class T>
inline void softmax_rows(T* x, int rows, int cols, int stride) {
  if constexpr (std::is_same_v<T, float>)
    active().softmax_rows(x, rows, cols, stride);
  else
    ref::softmax_rows(x, rows, cols, stride);
}

template <class T>
inline void layernorm_rows(const T* x, T* y, T* mean, T* rstd, int rows, int cols, T eps) {
  if constexpr (std::is_same_v<T, float>)
    active().layernorm_rows(x, y, mean, rstd, rows, cols, eps);
  else
    ref::layernorm_rows(x, y, mean, rstd, rows, cols, eps);
}

template <class T>
inline void gelu(const T* x, T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>)
    active().gelu(x, y, n);
  else
    ref::gelu(x, y, n);
}

template <class T>
inline void gelu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
  if constexpr (std::is_same_v<T, float>)
    active().gelu_backward(x, dy, dx, n);
  else
    ref::gelu_backward(x, dy, dx, n);
}

template <class T>
inline void adamw(T* param, const T* grad, T* m, T* v, std::size_t n, const AdamWParams& p) {
  if constexpr (std::is_same_v<T, float>)
    active().adamw(param, grad, m, v, n, p);
  else
    ref::adamw(param, grad, m, v, n, p);
}

template <class T>
inline T dot(const T* x, const T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>)
    return active().dot(x, y, n);
  else
    return ref::dot(x, y, n);
}

template <class T>
inline void axpy(T a, const T* x, T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>)
    active().axpy(a, x, y, n);
  else
    ref::axpy(a, x, y, n);
}

}  // namespace gf::kernels
