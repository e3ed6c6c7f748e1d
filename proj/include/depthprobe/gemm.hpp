#pragma once

#include <cstring>
#include <vector>

#include "depthprobe/numerics.hpp"

// Register-tiled matmul kernels. Tile bounds are template parameters so the
// accumulator block stays in registers. The per-element accumulation order is
// a plain sequential walk over k for every tile shape, so a row-subset
// product is bit-identical to the same rows of a full product, and results
// do not depend on how callers partition work across threads.

namespace depthprobe {
namespace detail {

template <typename S>
inline constexpr int kTileCols = 256 / static_cast<int>(sizeof(S));  // 64 f32 / 32 f64

template <typename S, int MR, int NR>
inline void gemm_tile_nn(const S* __restrict a, const S* __restrict b, S* __restrict c,
                         int i0, int j0, int k, int n, int lda, bool accumulate) {
  S acc[MR][NR];
  for (int r = 0; r < MR; ++r) {
    if (accumulate)
      std::memcpy(acc[r], c + static_cast<size_t>(i0 + r) * n + j0, NR * sizeof(S));
    else
      for (int q = 0; q < NR; ++q) acc[r][q] = S(0);
  }
  for (int p = 0; p < k; ++p) {
    const S* __restrict brow = b + static_cast<size_t>(p) * n + j0;
    for (int r = 0; r < MR; ++r) {
      const S av = a[static_cast<size_t>(i0 + r) * lda + p];
      for (int q = 0; q < NR; ++q) acc[r][q] += av * brow[q];
    }
  }
  for (int r = 0; r < MR; ++r)
    std::memcpy(c + static_cast<size_t>(i0 + r) * n + j0, acc[r], NR * sizeof(S));
}

template <typename S, int NR>
inline void gemm_tile_rows(const S* a, const S* b, S* c, int i0, int j0, int mr, int k, int n,
                           int lda, bool accumulate) {
  switch (mr) {
    case 4:
      gemm_tile_nn<S, 4, NR>(a, b, c, i0, j0, k, n, lda, accumulate);
      return;
    case 3:
      gemm_tile_nn<S, 3, NR>(a, b, c, i0, j0, k, n, lda, accumulate);
      return;
    case 2:
      gemm_tile_nn<S, 2, NR>(a, b, c, i0, j0, k, n, lda, accumulate);
      return;
    default:
      gemm_tile_nn<S, 1, NR>(a, b, c, i0, j0, k, n, lda, accumulate);
      return;
  }
}

template <typename S>
inline void gemm_cols_tail(const S* __restrict a, const S* __restrict b, S* __restrict c,
                           int i0, int j0, int mr, int k, int n, int lda, bool accumulate) {
  for (int r = 0; r < mr; ++r) {
    for (int j = j0; j < n; ++j) {
      S s = accumulate ? c[static_cast<size_t>(i0 + r) * n + j] : S(0);
      for (int p = 0; p < k; ++p)
        s += a[static_cast<size_t>(i0 + r) * lda + p] * b[static_cast<size_t>(p) * n + j];
      c[static_cast<size_t>(i0 + r) * n + j] = s;
    }
  }
}

template <typename S>
inline void gemm_raw_nn(const S* a, const S* b, S* c, int m, int k, int n, int lda,
                        bool accumulate) {
  constexpr int NR = kTileCols<S>;
  constexpr int kRows = 4;
  for (int i = 0; i < m; i += kRows) {
    const int mr = std::min(kRows, m - i);
    int j = 0;
    for (; j + NR <= n; j += NR) gemm_tile_rows<S, NR>(a, b, c, i, j, mr, k, n, lda, accumulate);
    for (; j + NR / 4 <= n; j += NR / 4)
      gemm_tile_rows<S, NR / 4>(a, b, c, i, j, mr, k, n, lda, accumulate);
    if (j < n) gemm_cols_tail<S>(a, b, c, i, j, mr, k, n, lda, accumulate);
  }
}

}  // namespace detail

// C = A * B (optionally C += A * B). A: m x k, B: k x n, C: m x n.
template <typename S>
inline void gemm_nn(const Mat<S>& a, const Mat<S>& b, Mat<S>& c, bool accumulate = false) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols())
    throw ValueError("gemm_nn: shape mismatch");
  detail::gemm_raw_nn<S>(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(),
                         a.cols(), accumulate);
}

// C = A * B^T. B is packed transposed once, then reuses the NN kernel.
template <typename S>
inline void gemm_nt(const Mat<S>& a, const Mat<S>& b, Mat<S>& c, bool accumulate = false) {
  if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows())
    throw ValueError("gemm_nt: shape mismatch");
  thread_local std::vector<S> packed;
  packed.resize(static_cast<size_t>(b.rows()) * b.cols());
  for (int i = 0; i < b.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j)
      packed[static_cast<size_t>(j) * b.rows() + i] = b.at(i, j);
  detail::gemm_raw_nn<S>(a.data(), packed.data(), c.data(), a.rows(), a.cols(), b.rows(),
                         a.cols(), accumulate);
}

// C = A^T * B. A: k x m, B: k x n, C: m x n.
template <typename S>
inline void gemm_tn(const Mat<S>& a, const Mat<S>& b, Mat<S>& c, bool accumulate = false) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols())
    throw ValueError("gemm_tn: shape mismatch");
  thread_local std::vector<S> packed;
  packed.resize(static_cast<size_t>(a.rows()) * a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      packed[static_cast<size_t>(j) * a.rows() + i] = a.at(i, j);
  detail::gemm_raw_nn<S>(packed.data(), b.data(), c.data(), a.cols(), a.rows(), b.cols(),
                         a.rows(), accumulate);
}

}  // namespace depthprobe
