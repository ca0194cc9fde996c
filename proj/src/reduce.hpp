#pragma once

// Double-precision sums over float or double arrays. Eight interleaved partial
// sums (fixed order, so still deterministic) let the loop vectorize instead of
// waiting on one long dependency chain.

#include <cstddef>

namespace edcnn::detail {

template <typename T>
double sum_double(const T* p, std::size_t n) {
  double lane[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) lane[j] += static_cast<double>(p[i + j]);
  for (; i < n; ++i) lane[i % 8] += static_cast<double>(p[i]);
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

template <typename T>
double dot_double(const T* a, const T* b, std::size_t n) {
  double lane[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) lane[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
  for (; i < n; ++i) lane[i % 8] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

}  // namespace edcnn::detail
