#include "edcnn/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "edcnn/rng.hpp"

namespace edcnn {

namespace {

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t, delta;

  bool contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / a;
    const double v = (-dx * sin_t + dy * cos_t) / b;
    return u * u + v * v <= 1.0;
  }
};

}  // namespace

Tensor generate_phantom(std::uint64_t seed, int h, int w) {
  if (h < 64 || w < 64) throw std::invalid_argument("generate_phantom: size " + std::to_string(h) + "x" + std::to_string(w) + " below 64x64");
  Rng rng(derive_seed(seed, 0x7068616eULL));
  const double dim = std::min(h, w);
  const double body_cx = w / 2.0 + rng.uniform(-0.03, 0.03) * w;
  const double body_cy = h / 2.0 + rng.uniform(-0.03, 0.03) * h;
  const double body_r = dim * rng.uniform(0.38, 0.46);
  const double body_level = rng.uniform(0.2, 0.35);
  const double edge_softness = 1.5;

  const int count = 5 + static_cast<int>(rng.uniform_index(8));
  std::vector<Ellipse> shapes;
  for (int i = 0; i < count; ++i) {
    const double r = body_r * std::sqrt(rng.uniform()) * 0.8;
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double sign = rng.uniform() < 0.7 ? 1.0 : -1.0;
    shapes.push_back(Ellipse{body_cx + r * std::cos(phi), body_cy + r * std::sin(phi), dim * rng.uniform(0.03, 0.2),
                             dim * rng.uniform(0.03, 0.2), std::cos(theta), std::sin(theta), sign * rng.uniform(0.1, 0.5)});
  }

  Tensor img(Shape{1, 1, h, w});
  float* p = img.ptr();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      const double d = std::hypot(px - body_cx, py - body_cy) - body_r;
      double v = body_level / (1.0 + std::exp(d / edge_softness));
      for (const Ellipse& e : shapes)
        if (e.contains(px, py)) v += e.delta;
      p[static_cast<std::size_t>(y) * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

namespace {

void check_dose(double dose_factor) {
  if (!(dose_factor > 0.0 && dose_factor <= 1.0)) {
    throw std::invalid_argument("dose_factor must be in (0, 1], got " + std::to_string(dose_factor));
  }
}

}  // namespace

double low_dose_sigma(double clean_value, double dose_factor) {
  check_dose(dose_factor);
  return kNoiseSigma0 * std::sqrt((1.0 / dose_factor - 1.0) * (clean_value + 0.1));
}

Tensor simulate_low_dose(const Tensor& clean, double dose_factor, std::uint64_t seed) {
  check_dose(dose_factor);
  Tensor out = clean;
  if (dose_factor == 1.0) return out;
  Rng rng(derive_seed(seed, 0x6e6f6973ULL));
  for (float& v : out.data()) {
    const double noisy = v + low_dose_sigma(v, dose_factor) * rng.normal();
    v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
  return out;
}

}  // namespace edcnn
