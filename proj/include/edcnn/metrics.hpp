#pragma once

#include "edcnn/extractor.hpp"
#include "edcnn/tensor.hpp"

namespace edcnn {

/// SSIM constants: 11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, range 1.
struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

double mse(const Tensor& a, const Tensor& b);

/// 10 log10(peak^2 / mse). Returns +infinity when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

double rmse(const Tensor& a, const Tensor& b);

/// Mean of the local SSIM map over all fully-contained windows, averaged over the
/// batch. Inputs must have one channel and extents >= the window.
double ssim(const Tensor& a, const Tensor& b, const SsimParams& params = {});

/// MSE between the last-stage extractor features of a and b.
double feature_distance(const FrozenExtractor& ext, const Tensor& a, const Tensor& b);

}  // namespace edcnn
