#pragma once

#include <array>
#include <vector>

#include "edcnn/tensor.hpp"

namespace edcnn {

/// Base 3x3 patterns, row-major. Filter i of a bank uses pattern i % 4.
/// Every pattern sums to zero.
inline constexpr std::array<std::array<int, 9>, 4> kSobelPatterns = {{
    {-1, 0, 1, -2, 0, 2, -1, 0, 1},   // vertical
    {-1, -2, -1, 0, 0, 0, 1, 2, 1},   // horizontal
    {-2, -1, 0, -1, 0, 1, 0, 1, 2},   // main diagonal
    {0, -1, -2, 1, 0, -1, 2, 1, 0},   // anti-diagonal
}};

/// Trainable Sobel operators: filter i is factors[i] * kSobelPatterns[i % 4].
template <typename T>
struct SobelBank {
  std::vector<T> factors;

  static SobelBank unit(int n_filters);
  int n_filters() const { return static_cast<int>(factors.size()); }
  /// Throws std::invalid_argument unless n_filters is a positive multiple of 4.
  void validate() const;
};

/// (n_filters, 1, 3, 3) kernel tensor; no bias.
template <typename T>
BasicTensor<T> build_kernels(const SobelBank<T>& bank);

/// Output channels: n_filters edge maps (zero-padded stride-1 convolution), then the
/// input image unchanged as the last channel.
template <typename T>
BasicTensor<T> ee_forward(const SobelBank<T>& bank, const BasicTensor<T>& x);

template <typename T>
struct EdgeGrads {
  BasicTensor<T> input;  // empty when not requested
  std::vector<T> factors;
};

template <typename T>
EdgeGrads<T> ee_backward(const SobelBank<T>& bank, const BasicTensor<T>& x, const BasicTensor<T>& grad_out,
                         bool need_input = true);

}  // namespace edcnn
