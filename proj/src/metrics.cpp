#include "edcnn/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "edcnn/loss.hpp"

namespace edcnn {

double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.ptr()[i]) - static_cast<double>(b.ptr()[i]);
    acc += d * d;
  }
  return a.size() ? acc / static_cast<double>(a.size()) : 0.0;
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

double rmse(const Tensor& a, const Tensor& b) { return std::sqrt(mse(a, b)); }

namespace {

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double center = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

// 'valid' separable filtering of a h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * src[static_cast<std::size_t>(y) * w + x + t];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * rows[static_cast<std::size_t>(y + t) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimParams& params) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  if (a.c() != 1) throw ShapeError("ssim: expected single-channel images, got c=" + std::to_string(a.c()));
  if (a.h() < params.window || a.w() < params.window) {
    throw ShapeError("ssim: image " + std::to_string(a.h()) + "x" + std::to_string(a.w()) + " smaller than the " +
                     std::to_string(params.window) + "x" + std::to_string(params.window) + " window");
  }
  if (a.n() == 0) return 1.0;
  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);
  const std::vector<double> taps = gaussian_taps(params.window, params.sigma);
  const int h = a.h();
  const int w = a.w();
  const std::size_t plane = a.shape().plane();

  double total = 0.0;
  for (int n = 0; n < a.n(); ++n) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = a.plane(n, 0)[i];
      y[i] = b.plane(n, 0)[i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, taps);
    const auto my = filter_valid(y, h, w, taps);
    const auto sxx = filter_valid(xx, h, w, taps);
    const auto syy = filter_valid(yy, h, w, taps);
    const auto sxy = filter_valid(xy, h, w, taps);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / a.n();
}

double feature_distance(const FrozenExtractor& ext, const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "feature_distance");
  const auto fa = ext.trace(a, FrozenExtractor::kStages);
  const auto fb = ext.trace(b, FrozenExtractor::kStages);
  return mse_loss(fa.out.back(), fb.out.back()).value;
}

}  // namespace edcnn
