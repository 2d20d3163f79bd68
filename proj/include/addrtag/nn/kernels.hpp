// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace addrtag::nn::kernels {

// Row-major dense kernels. Every output row is accumulated over the inner
// dimension in ascending order regardless of how many rows are processed
// together, so a row's result never depends on the other rows in the batch.
// That is what makes batched and one-at-a-time inference bit-identical.

namespace detail {

template <typename T>
void axpy_block(const T* x, std::size_t rows, std::size_t inner, const T* w, std::size_t cols, T* y,
                std::size_t j0, std::size_t j1) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    T* y0 = y + r * cols;
    T* y1 = y0 + cols;
    T* y2 = y1 + cols;
    T* y3 = y2 + cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const T a0 = x[r * inner + k];
      const T a1 = x[(r + 1) * inner + k];
      const T a2 = x[(r + 2) * inner + k];
      const T a3 = x[(r + 3) * inner + k];
      const T* wk = w + k * cols;
      for (std::size_t j = j0; j < j1; ++j) {
        const T v = wk[j];
        y0[j] += a0 * v;
        y1[j] += a1 * v;
        y2[j] += a2 * v;
        y3[j] += a3 * v;
      }
    }
  }
  for (; r < rows; ++r) {
    T* yr = y + r * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const T a = x[r * inner + k];
      const T* wk = w + k * cols;
      for (std::size_t j = j0; j < j1; ++j) yr[j] += a * wk[j];
    }
  }
}

#if defined(__AVX__)
#if defined(__AVX512F__)
inline constexpr std::size_t kLanes = 16;
#else
inline constexpr std::size_t kLanes = 8;
#endif
typedef float vf __attribute__((vector_size(4 * kLanes)));

inline vf loadv(const float* p) {
  vf v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void storev(float* p, vf v) { std::memcpy(p, &v, sizeof v); }

inline constexpr std::size_t kTileCols = 2 * kLanes;
inline constexpr std::size_t kBlockInner = 256;
inline constexpr std::size_t kBlockCols = 256;

// Accumulators for an R x kTileCols output tile stay in registers across the
// inner loop. `xs` is the row stride of x. With Fresh the tile starts from
// zero instead of the contents of y.
template <std::size_t R, bool Fresh>
inline void tile(const float* x, std::size_t xs, std::size_t inner, const float* w, std::size_t cols, float* y) {
  vf acc[R][2];
  for (std::size_t i = 0; i < R; ++i) {
    acc[i][0] = Fresh ? vf{} : loadv(y + i * cols);
    acc[i][1] = Fresh ? vf{} : loadv(y + i * cols + kLanes);
  }
  for (std::size_t k = 0; k < inner; ++k) {
    const vf w0 = loadv(w + k * cols);
    const vf w1 = loadv(w + k * cols + kLanes);
    for (std::size_t i = 0; i < R; ++i) {
      const float a = x[i * xs + k];
      acc[i][0] += a * w0;
      acc[i][1] += a * w1;
    }
  }
  for (std::size_t i = 0; i < R; ++i) {
    storev(y + i * cols, acc[i][0]);
    storev(y + i * cols + kLanes, acc[i][1]);
  }
}

// Narrow column ranges put kLanes rows in a vector instead, read from a
// transposed copy of x padded with zero rows; each of the M output columns
// keeps one accumulator.
template <std::size_t M>
inline void lanes_tile(const float* xt, std::size_t inner, const float* w, std::size_t cols, float* y,
                       std::size_t ys, std::size_t n) {
  float buf[M][kLanes] = {};
  for (std::size_t c = 0; c < M; ++c) {
    for (std::size_t i = 0; i < n; ++i) buf[c][i] = y[i * ys + c];
  }
  vf acc[M];
  for (std::size_t c = 0; c < M; ++c) acc[c] = loadv(buf[c]);
  for (std::size_t k = 0; k < inner; ++k) {
    const vf a = loadv(xt + k * kLanes);
    const float* wk = w + k * cols;
    for (std::size_t c = 0; c < M; ++c) acc[c] += a * wk[c];
  }
  for (std::size_t c = 0; c < M; ++c) storev(buf[c], acc[c]);
  for (std::size_t c = 0; c < M; ++c) {
    for (std::size_t i = 0; i < n; ++i) y[i * ys + c] = buf[c][i];
  }
}

inline void lanes_block(const float* x, std::size_t rows, std::size_t inner, const float* w, std::size_t cols,
                        float* y, std::size_t j0, std::size_t j1) {
  std::vector<float> xt(inner * kLanes);
  for (std::size_t r0 = 0; r0 < rows; r0 += kLanes) {
    const std::size_t n = std::min(kLanes, rows - r0);
    if (n < kLanes) std::fill(xt.begin(), xt.end(), 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      const float* xr = x + (r0 + i) * inner;
      for (std::size_t k = 0; k < inner; ++k) xt[k * kLanes + i] = xr[k];
    }
    float* yr = y + r0 * cols;
    std::size_t j = j0;
    for (; j + 8 <= j1; j += 8) lanes_tile<8>(xt.data(), inner, w + j, cols, yr + j, cols, n);
    if (j + 4 <= j1) {
      lanes_tile<4>(xt.data(), inner, w + j, cols, yr + j, cols, n);
      j += 4;
    }
    if (j + 2 <= j1) {
      lanes_tile<2>(xt.data(), inner, w + j, cols, yr + j, cols, n);
      j += 2;
    }
    if (j < j1) lanes_tile<1>(xt.data(), inner, w + j, cols, yr + j, cols, n);
  }
}

template <std::size_t R, bool Fresh>
inline void tile_row(const float* x, std::size_t xs, std::size_t inner, const float* w, std::size_t cols, float* y,
                     std::size_t c0, std::size_t c1) {
  for (std::size_t j = c0; j < c1; j += kTileCols) tile<R, Fresh>(x, xs, inner, w + j, cols, y + j);
}

template <bool Fresh>
inline void tiled_block(const float* x, std::size_t rows, std::size_t inner, std::size_t k0, std::size_t kn,
                        const float* wk, std::size_t cols, float* y, std::size_t c0, std::size_t c1) {
  std::size_t r = 0;
  for (; r + 6 <= rows; r += 6) tile_row<6, Fresh>(x + r * inner + k0, inner, kn, wk, cols, y + r * cols, c0, c1);
  for (; r + 4 <= rows; r += 4) tile_row<4, Fresh>(x + r * inner + k0, inner, kn, wk, cols, y + r * cols, c0, c1);
  for (; r < rows; ++r) tile_row<1, Fresh>(x + r * inner + k0, inner, kn, wk, cols, y + r * cols, c0, c1);
}

// y = x * w when Fresh, y += x * w otherwise. The first inner block of a
// fresh product starts its tiles from zero, which leaves every sum exactly
// as if y had been zero-filled.
template <bool Fresh>
inline void matmul_avx(const float* x, std::size_t rows, std::size_t inner, const float* w, std::size_t cols,
                       float* y) {
  if (rows == 1 || inner == 0) {
    if (Fresh) std::fill(y, y + rows * cols, 0.0f);
    axpy_block(x, rows, inner, w, cols, y, 0, cols);
    return;
  }
  // Blocked over inner and column ranges; each tile resumes from the partial
  // sums in y, so the per-element order is still ascending k.
  const std::size_t tiled = cols - cols % kTileCols;
  for (std::size_t k0 = 0; k0 < inner; k0 += kBlockInner) {
    const std::size_t kn = std::min(kBlockInner, inner - k0);
    const float* wk = w + k0 * cols;
    for (std::size_t c0 = 0; c0 < tiled; c0 += kBlockCols) {
      const std::size_t c1 = std::min(tiled, c0 + kBlockCols);
      if (Fresh && k0 == 0) {
        tiled_block<true>(x, rows, inner, k0, kn, wk, cols, y, c0, c1);
      } else {
        tiled_block<false>(x, rows, inner, k0, kn, wk, cols, y, c0, c1);
      }
    }
  }
  if (tiled < cols) {
    if (Fresh) {
      for (std::size_t r = 0; r < rows; ++r) std::fill(y + r * cols + tiled, y + (r + 1) * cols, 0.0f);
    }
    lanes_block(x, rows, inner, w, cols, y, tiled, cols);
  }
}
#endif

}  // namespace detail

/// y[rows x cols] += x[rows x inner] * w[inner x cols]
template <typename T>
void matmul_acc(const T* x, std::size_t rows, std::size_t inner, const T* w, std::size_t cols, T* y) {
  detail::axpy_block(x, rows, inner, w, cols, y, 0, cols);
}

/// y[rows x cols] = x[rows x inner] * w[inner x cols]; y need not be
/// initialised. Same result as zero-filling y and calling matmul_acc.
template <typename T>
void matmul_set(const T* x, std::size_t rows, std::size_t inner, const T* w, std::size_t cols, T* y) {
  std::fill(y, y + rows * cols, T(0));
  matmul_acc(x, rows, inner, w, cols, y);
}

#if defined(__AVX__)
template <>
inline void matmul_acc<float>(const float* x, std::size_t rows, std::size_t inner, const float* w, std::size_t cols,
                              float* y) {
  detail::matmul_avx<false>(x, rows, inner, w, cols, y);
}

template <>
inline void matmul_set<float>(const float* x, std::size_t rows, std::size_t inner, const float* w, std::size_t cols,
                              float* y) {
  detail::matmul_avx<true>(x, rows, inner, w, cols, y);
}
#endif

template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  }
  return out;
}

}  // namespace addrtag::nn::kernels
