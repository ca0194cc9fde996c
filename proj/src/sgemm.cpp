#include "sgemm.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace edcnn::detail {

#if defined(__AVX512F__)

namespace {

constexpr int kMaxVecs = 3;  // 16-float vectors per tile row

// An R x (16 * NV) tile of C over the full depth. `last` masks the final vector.
template <int NV, int R>
inline void tile(int k, const float* const* ar, const float* const* br, std::ptrdiff_t j, float* c, std::ptrdiff_t ldc,
                 __mmask16 last, bool accumulate) {
  __m512 acc[R][NV];
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < NV; ++v) acc[r][v] = _mm512_setzero_ps();
  const float* a[R];
  for (int r = 0; r < R; ++r) a[r] = ar[r];
  int p = 0;
  do {  // k >= 1
    const float* bp = br[p] + j;
    __m512 bv[NV];
    for (int v = 0; v < NV - 1; ++v) bv[v] = _mm512_loadu_ps(bp + 16 * v);
    bv[NV - 1] = _mm512_maskz_loadu_ps(last, bp + 16 * (NV - 1));
    for (int r = 0; r < R; ++r) {
      const __m512 av = _mm512_set1_ps(a[r][p]);
      for (int v = 0; v < NV; ++v) acc[r][v] = _mm512_fmadd_ps(av, bv[v], acc[r][v]);
    }
  } while (++p < k);
  // Only constant indices into acc, so it stays in registers; the epilogue
  // goes through a small buffer.
  alignas(64) float out[R][16 * NV];
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < NV; ++v) _mm512_store_ps(&out[r][16 * v], acc[r][v]);
  for (int r = 0; r < R; ++r) {
    float* cr = c + r * ldc + j;
    for (int v = 0; v < NV; ++v) {
      const __mmask16 mask = v == NV - 1 ? last : __mmask16(0xFFFF);
      __m512 t = _mm512_load_ps(&out[r][16 * v]);
      if (accumulate) t = _mm512_add_ps(_mm512_maskz_loadu_ps(mask, cr + 16 * v), t);
      _mm512_mask_storeu_ps(cr + 16 * v, mask, t);
    }
  }
}

template <int R>
inline void tile_row(int vecs, int k, const float* const* ar, const float* const* br, std::ptrdiff_t j, float* c,
                     std::ptrdiff_t ldc, __mmask16 last, bool accumulate) {
  switch (vecs) {
    case 3: tile<3, R>(k, ar, br, j, c, ldc, last, accumulate); break;
    case 2: tile<2, R>(k, ar, br, j, c, ldc, last, accumulate); break;
    default: tile<1, R>(k, ar, br, j, c, ldc, last, accumulate); break;
  }
}

}  // namespace

void sgemm_rows(int m, int n, int k, const float* const* a_rows, const float* const* b_rows, float* c,
                std::ptrdiff_t ldc, bool accumulate, [[maybe_unused]] int threads) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!accumulate)
      for (int i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0f);
    return;
  }
  // Column blocks are independent and each keeps its summation order, so
  // splitting them across threads does not change the result.
  const int blocks = (n + 16 * kMaxVecs - 1) / (16 * kMaxVecs);
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && blocks > 1)
#endif
  for (int blk = 0; blk < blocks; ++blk) {
    const int j = blk * 16 * kMaxVecs;
    const int width = std::min(16 * kMaxVecs, n - j);
    const int vecs = (width + 15) / 16;
    const int rem = width % 16;
    const __mmask16 last = rem == 0 ? __mmask16(0xFFFF) : __mmask16((1u << rem) - 1);
    int i = 0;
    for (; i + 8 <= m; i += 8) tile_row<8>(vecs, k, a_rows + i, b_rows, j, c + i * ldc, ldc, last, accumulate);
    if (i + 4 <= m) {
      tile_row<4>(vecs, k, a_rows + i, b_rows, j, c + i * ldc, ldc, last, accumulate);
      i += 4;
    }
    if (i + 2 <= m) {
      tile_row<2>(vecs, k, a_rows + i, b_rows, j, c + i * ldc, ldc, last, accumulate);
      i += 2;
    }
    if (i < m) tile_row<1>(vecs, k, a_rows + i, b_rows, j, c + i * ldc, ldc, last, accumulate);
  }
}

void sgemm(int m, int n, int k, const float* a, std::ptrdiff_t a_rs, std::ptrdiff_t a_cs, const float* b,
           std::ptrdiff_t ldb, float* c, std::ptrdiff_t ldc, bool accumulate, int threads) {
  if (m <= 0 || n <= 0) return;
  thread_local std::vector<float> copy;
  thread_local std::vector<const float*> a_rows;
  thread_local std::vector<const float*> b_rows;
  // Rows of A with a non-unit column stride (transposed weights) are gathered
  // into a contiguous block first; it is small next to B.
  if (a_cs != 1 && k > 0) {
    copy.resize(static_cast<std::size_t>(m) * k);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) copy[static_cast<std::size_t>(i) * k + p] = a[i * a_rs + p * a_cs];
    a = copy.data();
    a_rs = k;
  }
  a_rows.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) a_rows[i] = a + i * a_rs;
  b_rows.resize(static_cast<std::size_t>(std::max(k, 0)));
  for (int p = 0; p < k; ++p) b_rows[p] = b + p * ldb;
  sgemm_rows(m, n, k, a_rows.data(), b_rows.data(), c, ldc, accumulate, threads);
}

#else

void sgemm(int m, int n, int k, const float* a, std::ptrdiff_t a_rs, std::ptrdiff_t a_cs, const float* b,
           std::ptrdiff_t ldb, float* c, std::ptrdiff_t ldc, bool accumulate, [[maybe_unused]] int threads) {
  using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Dyn = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
  if (m <= 0 || n <= 0) return;
  Eigen::Map<const Mat, Eigen::Unaligned, Dyn> am(a, m, k, Dyn(a_rs, a_cs));
  Eigen::Map<const Mat, Eigen::Unaligned, Eigen::OuterStride<>> bm(b, k, n, Eigen::OuterStride<>(ldb));
  Eigen::Map<Mat, Eigen::Unaligned, Eigen::OuterStride<>> cm(c, m, n, Eigen::OuterStride<>(ldc));
  if (accumulate) {
    cm.noalias() += am * bm;
  } else {
    cm.noalias() = am * bm;
  }
}

void sgemm_rows(int m, int n, int k, const float* const* a_rows, const float* const* b_rows, float* c,
                std::ptrdiff_t ldc, bool accumulate, [[maybe_unused]] int threads) {
  using Row = Eigen::Map<Eigen::RowVectorXf>;
  using ConstRow = Eigen::Map<const Eigen::RowVectorXf>;
  for (int i = 0; i < m; ++i) {
    Row ci(c + i * ldc, n);
    if (!accumulate) ci.setZero();
    for (int p = 0; p < k; ++p) ci += a_rows[i][p] * ConstRow(b_rows[p], n);
  }
}

#endif

}  // namespace edcnn::detail
