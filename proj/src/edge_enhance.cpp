#include "edcnn/edge_enhance.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>

#include "edcnn/ops.hpp"
#include "reduce.hpp"

namespace edcnn {

template <typename T>
SobelBank<T> SobelBank<T>::unit(int n_filters) {
  SobelBank bank{std::vector<T>(static_cast<std::size_t>(std::max(n_filters, 0)), T(1))};
  bank.validate();
  return bank;
}

template <typename T>
void SobelBank<T>::validate() const {
  if (factors.empty() || factors.size() % 4 != 0) {
    throw std::invalid_argument("SobelBank: n_filters must be a positive multiple of 4, got " +
                                std::to_string(factors.size()));
  }
}

template <typename T>
BasicTensor<T> build_kernels(const SobelBank<T>& bank) {
  bank.validate();
  BasicTensor<T> k(Shape{bank.n_filters(), 1, 3, 3});
  for (int i = 0; i < bank.n_filters(); ++i) {
    const auto& pattern = kSobelPatterns[static_cast<std::size_t>(i % 4)];
    T* dst = k.plane(i, 0);
    for (int j = 0; j < 9; ++j) dst[j] = bank.factors[static_cast<std::size_t>(i)] * static_cast<T>(pattern[static_cast<std::size_t>(j)]);
  }
  return k;
}

namespace {

template <typename T>
void check_edge_input(const BasicTensor<T>& x) {
  if (x.c() != 1) throw ShapeError("edge enhancement: expected 1 input channel, got c=" + std::to_string(x.c()));
  if (x.h() < 3) throw ShapeError("edge enhancement: height h=" + std::to_string(x.h()) + " below 3");
  if (x.w() < 3) throw ShapeError("edge enhancement: width w=" + std::to_string(x.w()) + " below 3");
}

}  // namespace

namespace {

// Every base pattern is antisymmetric under a half turn (p[8 - j] == -p[j]), so a
// response is a weighted sum of four differences x[far] - x[near]. On constant
// regions each difference is exactly zero, whatever the factors.
struct Tap {
  int dy, dx;  // offset of the "near" sample; the far one sits at (-dy, -dx)
  int weight;  // pattern value at the far sample
};

std::array<std::array<Tap, 4>, 4> pattern_taps() {
  std::array<std::array<Tap, 4>, 4> taps{};
  for (std::size_t p = 0; p < 4; ++p)
    for (int j = 0; j < 4; ++j) taps[p][static_cast<std::size_t>(j)] = Tap{j / 3 - 1, j % 3 - 1, kSobelPatterns[p][static_cast<std::size_t>(8 - j)]};
  return taps;
}

/// (n, 4, h, w) responses of the unscaled base patterns, zero padding.
template <typename T>
BasicTensor<T> base_responses(const BasicTensor<T>& x) {
  static const auto taps = pattern_taps();
  const BasicTensor<T> xp = zero_pad(x, 1);
  const int h = x.h(), w = x.w(), pw = w + 2;
  BasicTensor<T> r(Shape{x.n(), 4, h, w});
  for (int n = 0; n < x.n(); ++n) {
    const T* src = xp.plane(n, 0);
    for (int p = 0; p < 4; ++p) {
      T* dst = r.plane(n, p);
      for (int y = 0; y < h; ++y) {
        const T* center = src + (y + 1) * pw + 1;
        for (int xx = 0; xx < w; ++xx) {
          const T* c = center + xx;
          T acc = T(0);
          for (const Tap& t : taps[static_cast<std::size_t>(p)]) {
            if (t.weight == 0) continue;
            const int off = t.dy * pw + t.dx;
            acc += static_cast<T>(t.weight) * (c[-off] - c[off]);
          }
          dst[y * w + xx] = acc;
        }
      }
    }
  }
  return r;
}

}  // namespace

template <typename T>
BasicTensor<T> ee_forward(const SobelBank<T>& bank, const BasicTensor<T>& x) {
  bank.validate();
  check_edge_input(x);
  const BasicTensor<T> r = base_responses(x);
  const int f = bank.n_filters();
  const std::size_t plane = x.shape().plane();
  BasicTensor<T> out(Shape{x.n(), f + 1, x.h(), x.w()});
  for (int n = 0; n < x.n(); ++n) {
    for (int i = 0; i < f; ++i) {
      const T a = bank.factors[static_cast<std::size_t>(i)];
      const T* src = r.plane(n, i % 4);
      T* dst = out.plane(n, i);
      for (std::size_t k = 0; k < plane; ++k) dst[k] = a * src[k];
    }
    std::copy(x.plane(n, 0), x.plane(n, 0) + plane, out.plane(n, f));
  }
  return out;
}

template <typename T>
EdgeGrads<T> ee_backward(const SobelBank<T>& bank, const BasicTensor<T>& x, const BasicTensor<T>& grad_out,
                         bool need_input) {
  static const auto taps = pattern_taps();
  bank.validate();
  check_edge_input(x);
  const int f = bank.n_filters();
  require_same_shape(grad_out.shape(), Shape{x.n(), f + 1, x.h(), x.w()}, "ee_backward grad_out");
  const std::size_t plane = x.shape().plane();

  // d/dalpha_i = <grad_i, response of pattern i % 4>
  const BasicTensor<T> r = base_responses(x);
  EdgeGrads<T> out;
  out.factors.assign(static_cast<std::size_t>(f), T(0));
  for (int i = 0; i < f; ++i) {
    double acc = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* g = grad_out.plane(n, i);
      const T* rp = r.plane(n, i % 4);
      acc += detail::dot_double(g, rp, plane);
    }
    out.factors[static_cast<std::size_t>(i)] = static_cast<T>(acc);
  }
  if (!need_input) return out;

  // Fold the filters of each pattern together, then apply the adjoint stencil:
  // grad_x[q] += w * (G[q + o] - G[q - o]) for each tap at near offset o.
  const int h = x.h(), w = x.w(), pw = w + 2;
  BasicTensor<T> folded(Shape{x.n(), 4, h, w});
  for (int n = 0; n < x.n(); ++n) {
    for (int i = 0; i < f; ++i) {
      const T a = bank.factors[static_cast<std::size_t>(i)];
      const T* g = grad_out.plane(n, i);
      T* dst = folded.plane(n, i % 4);
      for (std::size_t k = 0; k < plane; ++k) dst[k] += a * g[k];
    }
  }
  const BasicTensor<T> gp = zero_pad(folded, 1);
  out.input = BasicTensor<T>(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    T* dst = out.input.plane(n, 0);
    for (int p = 0; p < 4; ++p) {
      const T* src = gp.plane(n, p);
      for (int y = 0; y < h; ++y) {
        const T* center = src + (y + 1) * pw + 1;
        for (int xx = 0; xx < w; ++xx) {
          const T* c = center + xx;
          T acc = T(0);
          for (const Tap& t : taps[static_cast<std::size_t>(p)]) {
            if (t.weight == 0) continue;
            const int off = t.dy * pw + t.dx;
            acc += static_cast<T>(t.weight) * (c[off] - c[-off]);
          }
          dst[y * w + xx] += acc;
        }
      }
    }
    const T* id = grad_out.plane(n, f);
    for (std::size_t k = 0; k < plane; ++k) dst[k] += id[k];
  }
  return out;
}

template struct SobelBank<float>;
template struct SobelBank<double>;
template BasicTensor<float> build_kernels(const SobelBank<float>&);
template BasicTensor<double> build_kernels(const SobelBank<double>&);
template BasicTensor<float> ee_forward(const SobelBank<float>&, const BasicTensor<float>&);
template BasicTensor<double> ee_forward(const SobelBank<double>&, const BasicTensor<double>&);
template EdgeGrads<float> ee_backward(const SobelBank<float>&, const BasicTensor<float>&, const BasicTensor<float>&, bool);
template EdgeGrads<double> ee_backward(const SobelBank<double>&, const BasicTensor<double>&, const BasicTensor<double>&, bool);

}  // namespace edcnn
