#pragma once

// Single-precision C = A * B (or C += A * B) for the shapes the convolutions
// produce: few rows, long contiguous rows in B and C. A is read through
// arbitrary strides so transposed weights need no copy by the caller.

#include <cstddef>

namespace edcnn::detail {

/// c[i*ldc + j] (+)= sum_p a[i*a_rs + p*a_cs] * b[p*ldb + j], 0 <= i < m, 0 <= j < n, 0 <= p < k.
/// With AVX-512 the sums run over p in increasing order, so results depend on
/// neither n nor `threads`; other builds defer to Eigen.
void sgemm(int m, int n, int k, const float* a, std::ptrdiff_t a_rs, std::ptrdiff_t a_cs, const float* b,
           std::ptrdiff_t ldb, float* c, std::ptrdiff_t ldc, bool accumulate, int threads = 1);

/// As sgemm with row i of A at a_rows[i] and row p of B at b_rows[p]. Rows may
/// overlap, which is how stride-1 convolutions feed shifted views of one
/// padded plane without building im2col columns.
void sgemm_rows(int m, int n, int k, const float* const* a_rows, const float* const* b_rows, float* c,
                std::ptrdiff_t ldc, bool accumulate, int threads = 1);

}  // namespace edcnn::detail
