#pragma once

#include <cstdint>

#include "edcnn/tensor.hpp"

namespace edcnn {

inline constexpr double kNoiseSigma0 = 0.05;

/// Synthetic CT-like slice (1,1,h,w) in [0,1]: a soft-edged body disc with 5-12
/// sharp-edged ellipses of varying intensity. Requires h, w >= 64.
Tensor generate_phantom(std::uint64_t seed, int h, int w);

/// Signal-dependent Gaussian noise with std 0.05 * sqrt((1/dose - 1) * (clean + 0.1)),
/// clamped to [0,1]. dose_factor == 1 returns the input unchanged.
Tensor simulate_low_dose(const Tensor& clean, double dose_factor, std::uint64_t seed);

/// Per-pixel noise std used by simulate_low_dose.
double low_dose_sigma(double clean_value, double dose_factor);

}  // namespace edcnn
