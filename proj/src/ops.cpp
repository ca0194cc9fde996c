#include "edcnn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <type_traits>

#include "reduce.hpp"
#include "sgemm.hpp"

namespace edcnn {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

// im2col buffers are capped at this many elements (sized to stay cache-resident);
// larger images are processed in bands of output rows.
constexpr std::size_t kColumnBudget = std::size_t{1} << 16;

int g_threads = [] {
  Eigen::setNbThreads(1);
  return 1;
}();

// c (+)= a * b with a read through (row, column) strides; b and c are row-major.
template <typename T>
void matmul(int m, int n, int k, const T* a, std::ptrdiff_t a_rs, std::ptrdiff_t a_cs, const T* b, std::ptrdiff_t ldb,
            T* c, std::ptrdiff_t ldc, bool accumulate) {
  if constexpr (std::is_same_v<T, float>) {
    detail::sgemm(m, n, k, a, a_rs, a_cs, b, ldb, c, ldc, accumulate, num_threads());
  } else {
    using Dyn = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
    Eigen::Map<const RowMatrix<T>, Eigen::Unaligned, Dyn> am(a, m, k, Dyn(a_rs, a_cs));
    ConstMatMap<T> bm(b, k, n, Eigen::OuterStride<>(ldb));
    MatMap<T> cm(c, m, n, Eigen::OuterStride<>(ldc));
    if (accumulate) {
      cm.noalias() += am * bm;
    } else {
      cm.noalias() = am * bm;
    }
  }
}

// dst (cols x rows, row-major) = transpose of the rows x cols block at src with row stride ld.
template <typename T>
void transpose_into(const T* src, int rows, int cols, std::ptrdiff_t ld, std::vector<T>& dst) {
  dst.resize(static_cast<std::size_t>(rows) * cols);
  // Contiguous writes; the reads walk `rows` sequential streams.
  for (int c = 0; c < cols; ++c) {
    T* d = dst.data() + static_cast<std::size_t>(c) * rows;
    for (int r = 0; r < rows; ++r) d[r] = src[r * ld + c];
  }
}

struct ConvGeometry {
  int in_c, in_h, in_w;
  int out_c, out_h, out_w;
  int kh, kw, stride, pad;
  int rows() const { return in_c * kh * kw; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  int band_rows() const {
    std::size_t per_row = static_cast<std::size_t>(rows()) * static_cast<std::size_t>(out_w);
    std::size_t r = std::max<std::size_t>(1, kColumnBudget / std::max<std::size_t>(per_row, 1));
    return static_cast<int>(std::min<std::size_t>(r, static_cast<std::size_t>(out_h)));
  }
};

template <typename T>
ConvGeometry make_geometry(const BasicTensor<T>& x, const ConvSpec<T>& spec) {
  const Shape& ks = spec.kernel.shape();
  if (x.c() != ks.c) {
    throw ShapeError("conv2d: input channels c=" + std::to_string(x.c()) +
                     " do not match kernel in_channels=" + std::to_string(ks.c));
  }
  if (!spec.bias.empty() && static_cast<int>(spec.bias.size()) != ks.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(spec.bias.size()) +
                     " does not match out_channels=" + std::to_string(ks.n));
  }
  Shape os = conv2d_output_shape(x.shape(), ks, spec.stride, spec.padding);
  return ConvGeometry{x.c(), x.h(), x.w(), os.c, os.h, os.w, ks.h, ks.w, spec.stride, spec.padding};
}

// Column layout: row (c*kh + ky)*kw + kx, column (y - row0)*out_w + x.
template <typename T>
void im2col(const T* src, const ConvGeometry& g, int row0, int row1, T* col) {
  const int cols = (row1 - row0) * g.out_w;
  for (int c = 0; c < g.in_c; ++c) {
    const T* plane = src + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        T* dst = col + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * cols;
        for (int y = row0; y < row1; ++y) {
          T* out = dst + static_cast<std::size_t>(y - row0) * g.out_w;
          const int iy = y * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) {
            std::fill_n(out, g.out_w, T(0));
            continue;
          }
          const T* in_row = plane + static_cast<std::size_t>(iy) * g.in_w;
          if (g.stride == 1) {
            const int x0 = std::clamp(g.pad - kx, 0, g.out_w);
            const int x1 = std::clamp(g.in_w - kx + g.pad, x0, g.out_w);
            std::fill_n(out, x0, T(0));
            std::copy(in_row + x0 + kx - g.pad, in_row + x1 + kx - g.pad, out + x0);
            std::fill(out + x1, out + g.out_w, T(0));
          } else {
            for (int x = 0; x < g.out_w; ++x) {
              const int ix = x * g.stride + kx - g.pad;
              out[x] = (ix >= 0 && ix < g.in_w) ? in_row[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const T* col, const ConvGeometry& g, int row0, int row1, T* dst) {
  const int cols = (row1 - row0) * g.out_w;
  for (int c = 0; c < g.in_c; ++c) {
    T* plane = dst + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* src = col + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * cols;
        for (int y = row0; y < row1; ++y) {
          const int iy = y * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* in = src + static_cast<std::size_t>(y - row0) * g.out_w;
          T* row = plane + static_cast<std::size_t>(iy) * g.in_w;
          if (g.stride == 1) {
            const int x0 = std::clamp(g.pad - kx, 0, g.out_w);
            const int x1 = std::clamp(g.in_w - kx + g.pad, x0, g.out_w);
            T* r = row + kx - g.pad;
            for (int x = x0; x < x1; ++x) r[x] += in[x];
            continue;
          }
          for (int x = 0; x < g.out_w; ++x) {
            const int ix = x * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.in_w) row[ix] += in[x];
          }
        }
      }
    }
  }
}

// Stride-1 float convs skip im2col. Each sample is copied once into a
// zero-padded buffer with row pitch in_w + 2*pad, and the GEMM reads row
// (c, ky, kx) of the column matrix as a shifted view of it. Outputs then live
// on an out_h x pitch grid whose last pitch - out_w columns per row are junk.
bool implicit_geometry(const ConvGeometry& g) { return g.stride == 1 && !g.pointwise(); }

struct PaddedInput {
  int pitch = 0;
  int cols = 0;  // out_h * pitch
  std::size_t plane = 0;
  std::vector<float> buf;
  std::vector<const float*> rows;  // one per column-matrix row

  explicit PaddedInput(const ConvGeometry& g)
      : pitch(g.in_w + 2 * g.pad),
        cols(g.out_h * pitch),
        plane(static_cast<std::size_t>(g.in_h + 2 * g.pad) * pitch),
        // The junk columns of the last row read up to kw - 1 past the final plane.
        buf(static_cast<std::size_t>(g.in_c) * plane + g.kw, 0.0f) {
    rows.reserve(static_cast<std::size_t>(g.rows()));
    for (int c = 0; c < g.in_c; ++c)
      for (int ky = 0; ky < g.kh; ++ky)
        for (int kx = 0; kx < g.kw; ++kx) rows.push_back(buf.data() + c * plane + ky * pitch + kx);
  }
  void load(const float* src, const ConvGeometry& g) {
    for (int c = 0; c < g.in_c; ++c) {
      float* dst = buf.data() + c * plane + static_cast<std::size_t>(g.pad) * pitch + g.pad;
      const float* s = src + static_cast<std::size_t>(c) * g.in_h * g.in_w;
      for (int y = 0; y < g.in_h; ++y) std::copy_n(s + y * g.in_w, g.in_w, dst + y * pitch);
    }
  }
};

void implicit_forward(const BasicTensor<float>& x, const ConvSpec<float>& spec, const ConvGeometry& g,
                      BasicTensor<float>& y) {
  PaddedInput in(g);
  const int k_rows = g.rows();
  std::vector<const float*> weights(static_cast<std::size_t>(g.out_c));
  for (int o = 0; o < g.out_c; ++o) weights[o] = spec.kernel.ptr() + static_cast<std::size_t>(o) * k_rows;
  std::vector<float> grid(static_cast<std::size_t>(g.out_c) * in.cols);
  for (int n = 0; n < x.n(); ++n) {
    in.load(x.sample(n), g);
    detail::sgemm_rows(g.out_c, in.cols, k_rows, weights.data(), in.rows.data(), grid.data(), in.cols, false,
                       num_threads());
    for (int o = 0; o < g.out_c; ++o) {
      const float b = spec.bias.empty() ? 0.0f : spec.bias[static_cast<std::size_t>(o)];
      const float* src = grid.data() + static_cast<std::size_t>(o) * in.cols;
      float* dst = y.plane(n, o);
      for (int r = 0; r < g.out_h; ++r)
        for (int c = 0; c < g.out_w; ++c) dst[r * g.out_w + c] = src[r * in.pitch + c] + b;
    }
  }
}

// grad_w[o][r] += sum over samples and output positions of grad_out * column row r.
void implicit_weight_grad(const BasicTensor<float>& x, const BasicTensor<float>& grad_out, const ConvGeometry& g,
                          float* grad_w) {
  PaddedInput in(g);
  const int k_rows = g.rows();
  const int out_c = g.out_c;
  if (out_c < 16) {
    // Too narrow for register tiles: plain dot products against grad_out
    // spread onto the padded grid (zeros in the junk columns).
    std::vector<float> gy(static_cast<std::size_t>(out_c) * in.cols, 0.0f);
    for (int n = 0; n < x.n(); ++n) {
      in.load(x.sample(n), g);
      for (int o = 0; o < out_c; ++o)
        for (int r = 0; r < g.out_h; ++r)
          std::copy_n(grad_out.plane(n, o) + r * g.out_w, g.out_w, gy.data() + o * in.cols + r * in.pitch);
      for (int o = 0; o < out_c; ++o) {
        Eigen::Map<const Eigen::VectorXf> go(gy.data() + o * in.cols, in.cols);
        for (int r = 0; r < k_rows; ++r)
          grad_w[o * k_rows + r] += Eigen::Map<const Eigen::VectorXf>(in.rows[r], in.cols).dot(go);
      }
    }
    return;
  }
  // Accumulated transposed (k_rows x out_c): the shifted views are the A rows
  // and grad_out, transposed onto the grid, is B. Depth runs in chunks small
  // enough for the B slice to stay in L1.
  constexpr int kChunk = 256;
  std::vector<float> gy_t(static_cast<std::size_t>(in.cols) * out_c, 0.0f);
  std::vector<float> acc(static_cast<std::size_t>(k_rows) * out_c, 0.0f);
  std::vector<const float*> a_rows(static_cast<std::size_t>(k_rows));
  std::vector<const float*> b_rows(kChunk);
  std::vector<const float*> planes(static_cast<std::size_t>(out_c));
  for (int n = 0; n < x.n(); ++n) {
    in.load(x.sample(n), g);
    for (int o = 0; o < out_c; ++o) planes[o] = grad_out.plane(n, o);
    for (int r = 0; r < g.out_h; ++r)
      for (int c = 0; c < g.out_w; ++c) {
        float* dst = gy_t.data() + static_cast<std::size_t>(r * in.pitch + c) * out_c;
        const int i = r * g.out_w + c;
        for (int o = 0; o < out_c; ++o) dst[o] = planes[o][i];
      }
    for (int q0 = 0; q0 < in.cols; q0 += kChunk) {
      const int depth = std::min(kChunk, in.cols - q0);
      for (int r = 0; r < k_rows; ++r) a_rows[r] = in.rows[r] + q0;
      for (int p = 0; p < depth; ++p) b_rows[p] = gy_t.data() + static_cast<std::size_t>(q0 + p) * out_c;
      detail::sgemm_rows(k_rows, out_c, depth, a_rows.data(), b_rows.data(), acc.data(), out_c, true, num_threads());
    }
  }
  for (int o = 0; o < out_c; ++o)
    for (int r = 0; r < k_rows; ++r) grad_w[o * k_rows + r] += acc[static_cast<std::size_t>(r) * out_c + o];
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, int stride, int padding) {
  if (stride <= 0) throw ShapeError("conv2d: stride must be positive, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("conv2d: padding must be non-negative, got " + std::to_string(padding));
  if (kernel.h <= 0 || kernel.w <= 0) throw ShapeError("conv2d: empty kernel " + to_string(kernel));
  const int ph = input.h + 2 * padding;
  const int pw = input.w + 2 * padding;
  if (ph < kernel.h) {
    throw ShapeError("conv2d: padded height " + std::to_string(ph) + " smaller than kernel height " +
                     std::to_string(kernel.h));
  }
  if (pw < kernel.w) {
    throw ShapeError("conv2d: padded width " + std::to_string(pw) + " smaller than kernel width " +
                     std::to_string(kernel.w));
  }
  return Shape{input.n, kernel.n, (ph - kernel.h) / stride + 1, (pw - kernel.w) / stride + 1};
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const ConvSpec<T>& spec) {
  const ConvGeometry g = make_geometry(x, spec);
  BasicTensor<T> y(Shape{x.n(), g.out_c, g.out_h, g.out_w});
  if constexpr (std::is_same_v<T, float>) {
    if (implicit_geometry(g)) {
      implicit_forward(x, spec, g, y);
      return y;
    }
  }
  const int k_rows = g.rows();
  const int plane = g.out_h * g.out_w;

  std::vector<T> col;
  const int band = g.band_rows();
  if (!g.pointwise()) col.resize(static_cast<std::size_t>(k_rows) * band * g.out_w);

  for (int n = 0; n < x.n(); ++n) {
    if (g.pointwise()) {
      matmul(g.out_c, plane, k_rows, spec.kernel.ptr(), k_rows, 1, x.sample(n), plane, y.sample(n), plane, false);
    } else {
      for (int r0 = 0; r0 < g.out_h; r0 += band) {
        const int r1 = std::min(g.out_h, r0 + band);
        const int cols = (r1 - r0) * g.out_w;
        im2col(x.sample(n), g, r0, r1, col.data());
        matmul(g.out_c, cols, k_rows, spec.kernel.ptr(), k_rows, 1, col.data(), cols,
               y.sample(n) + static_cast<std::size_t>(r0) * g.out_w, plane, false);
      }
    }
    if (!spec.bias.empty()) {
      for (int o = 0; o < g.out_c; ++o) {
        T* p = y.plane(n, o);
        const T b = spec.bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < plane; ++i) p[i] += b;
      }
    }
  }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const ConvSpec<T>& spec, const BasicTensor<T>& grad_out,
                             ConvBackwardNeeds needs) {
  const ConvGeometry g = make_geometry(x, spec);
  require_same_shape(grad_out.shape(), Shape{x.n(), g.out_c, g.out_h, g.out_w}, "conv2d_backward grad_out");

  ConvGrads<T> grads;
  const int k_rows = g.rows();
  const int plane = g.out_h * g.out_w;
  if (needs.params) grads.bias.assign(static_cast<std::size_t>(g.out_c), T(0));
  if (!needs.params && !needs.input) return grads;

  // Stride 1 with unchanged extent: the input gradient is the correlation of
  // grad_out with the flipped, channel-transposed kernel under the same padding.
  const bool same = !g.pointwise() && g.stride == 1 && g.out_h == g.in_h && g.out_w == g.in_w;
  if (needs.input && same) {
    BasicTensor<T> flipped(Shape{g.in_c, g.out_c, g.kh, g.kw});
    for (int o = 0; o < g.out_c; ++o)
      for (int c = 0; c < g.in_c; ++c)
        for (int ky = 0; ky < g.kh; ++ky)
          for (int kx = 0; kx < g.kw; ++kx) flipped(c, o, ky, kx) = spec.kernel(o, c, g.kh - 1 - ky, g.kw - 1 - kx);
    grads.input = conv2d_forward(grad_out, ConvSpec<T>{flipped, {}, 1, g.pad});
  } else if (needs.input) {
    grads.input = BasicTensor<T>(x.shape());
  }

  if (needs.params) grads.kernel = BasicTensor<T>(spec.kernel.shape());
  MatMap<T> grad_w(needs.params ? grads.kernel.ptr() : nullptr, g.out_c, k_rows, Eigen::OuterStride<>(k_rows));
  // In float the weight gradient accumulates transposed (k_rows x out_c): the
  // long column rows then feed the GEMM in place and only the grad_out slice
  // gets transposed.
  bool band_params = needs.params;
  if constexpr (std::is_same_v<T, float>) {
    if (needs.params && implicit_geometry(g)) {
      implicit_weight_grad(x, grad_out, g, grads.kernel.ptr());
      band_params = false;
    }
  }
  std::vector<T> grad_wt;
  std::vector<T> gy_t;
  if (std::is_same_v<T, float> && band_params) grad_wt.assign(static_cast<std::size_t>(k_rows) * g.out_c, T(0));
  auto accumulate_weights = [&](const T* a, std::ptrdiff_t lda, const T* gy, int depth) {
    if constexpr (std::is_same_v<T, float>) {
      transpose_into(gy, g.out_c, depth, plane, gy_t);
      matmul(k_rows, g.out_c, depth, a, lda, 1, gy_t.data(), g.out_c, grad_wt.data(), g.out_c, true);
    } else {
      ConstMatMap<T> am(a, k_rows, depth, Eigen::OuterStride<>(lda));
      ConstMatMap<T> gm(gy, g.out_c, depth, Eigen::OuterStride<>(plane));
      grad_w.noalias() += gm * am.transpose();
    }
  };

  std::vector<T> col;
  std::vector<T> grad_col;
  const int band = g.band_rows();
  const bool scatter_input = needs.input && !same;
  if (!g.pointwise()) {
    if (band_params) col.resize(static_cast<std::size_t>(k_rows) * band * g.out_w);
    if (scatter_input) grad_col.resize(static_cast<std::size_t>(k_rows) * band * g.out_w);
  }

  for (int n = 0; n < x.n(); ++n) {
    if (g.pointwise()) {
      if (needs.params) accumulate_weights(x.sample(n), plane, grad_out.sample(n), plane);
      if (needs.input) {
        matmul(g.in_c, plane, g.out_c, spec.kernel.ptr(), 1, k_rows, grad_out.sample(n), plane, grads.input.sample(n),
               plane, false);
      }
      continue;
    }
    if (!band_params && !scatter_input) continue;
    for (int r0 = 0; r0 < g.out_h; r0 += band) {
      const int r1 = std::min(g.out_h, r0 + band);
      const int cols = (r1 - r0) * g.out_w;
      const T* gy = grad_out.sample(n) + static_cast<std::size_t>(r0) * g.out_w;
      if (band_params) {
        im2col(x.sample(n), g, r0, r1, col.data());
        accumulate_weights(col.data(), cols, gy, cols);
      }
      if (scatter_input) {
        matmul(k_rows, cols, g.out_c, spec.kernel.ptr(), 1, k_rows, gy, plane, grad_col.data(), cols, false);
        col2im_accumulate(grad_col.data(), g, r0, r1, grads.input.sample(n));
      }
    }
  }

  if (needs.params) {
    if (!grad_wt.empty()) grad_w = ConstMatMap<T>(grad_wt.data(), k_rows, g.out_c, Eigen::OuterStride<>(g.out_c)).transpose();
    for (int o = 0; o < g.out_c; ++o) {
      double acc = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const T* p = grad_out.plane(n, o);
        acc += detail::sum_double(p, static_cast<std::size_t>(plane));
      }
      grads.bias[static_cast<std::size_t>(o)] = static_cast<T>(acc);
    }
  }
  return grads;
}

namespace {

template <typename T>
int check_pointwise(std::span<const BasicTensor<T>* const> parts, const BasicTensor<T>& kernel) {
  if (parts.empty()) throw ShapeError("pointwise conv: no inputs");
  const Shape& ks = kernel.shape();
  if (ks.h != 1 || ks.w != 1) throw ShapeError("pointwise conv: kernel must be 1x1, got " + to_string(ks));
  int channels = 0;
  for (const BasicTensor<T>* p : parts) {
    if (p->n() != parts[0]->n() || p->h() != parts[0]->h() || p->w() != parts[0]->w()) {
      throw ShapeError("pointwise conv: input " + to_string(p->shape()) + " does not match " + to_string(parts[0]->shape()) +
                       " outside the channel axis");
    }
    channels += p->c();
  }
  if (channels != ks.c) {
    throw ShapeError("pointwise conv: inputs carry c=" + std::to_string(channels) + " channels, kernel expects " +
                     std::to_string(ks.c));
  }
  return channels;
}

}  // namespace

template <typename T>
BasicTensor<T> pointwise_conv_forward(std::span<const BasicTensor<T>* const> parts, const BasicTensor<T>& kernel,
                                      std::span<const T> bias) {
  const int channels = check_pointwise(parts, kernel);
  const int out_c = kernel.n();
  if (!bias.empty() && static_cast<int>(bias.size()) != out_c) throw ShapeError("pointwise conv: bias length mismatch");
  const BasicTensor<T>& first = *parts[0];
  const int plane = first.h() * first.w();
  BasicTensor<T> y(Shape{first.n(), out_c, first.h(), first.w()});
  for (int n = 0; n < first.n(); ++n) {
    int offset = 0;
    for (const BasicTensor<T>* p : parts) {
      matmul(out_c, plane, p->c(), kernel.ptr() + offset, channels, 1, p->sample(n), plane, y.sample(n), plane, offset != 0);
      offset += p->c();
    }
    if (!bias.empty()) {
      for (int o = 0; o < out_c; ++o) {
        T* q = y.plane(n, o);
        const T b = bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < plane; ++i) q[i] += b;
      }
    }
  }
  return y;
}

template <typename T>
PointwiseGrads<T> pointwise_conv_backward(std::span<const BasicTensor<T>* const> parts, const BasicTensor<T>& kernel,
                                          const BasicTensor<T>& grad_out, const std::vector<bool>& need_input) {
  const int channels = check_pointwise(parts, kernel);
  const BasicTensor<T>& first = *parts[0];
  const int out_c = kernel.n();
  require_same_shape(grad_out.shape(), Shape{first.n(), out_c, first.h(), first.w()}, "pointwise conv grad_out");
  if (need_input.size() != parts.size()) throw std::invalid_argument("pointwise conv: need_input has the wrong length");
  const int plane = first.h() * first.w();

  PointwiseGrads<T> g;
  g.kernel = BasicTensor<T>(kernel.shape());
  g.inputs.resize(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (need_input[i]) g.inputs[i] = BasicTensor<T>(parts[i]->shape());
  }
  // Float accumulates the kernel gradient transposed, as in conv2d_backward.
  constexpr bool transposed = std::is_same_v<T, float>;
  std::vector<T> gw_t(transposed ? static_cast<std::size_t>(channels) * out_c : 0, T(0));
  std::vector<T> gy_t;
  for (int n = 0; n < first.n(); ++n) {
    ConstMatMap<T> gy(grad_out.sample(n), out_c, plane, Eigen::OuterStride<>(plane));
    if constexpr (transposed) transpose_into(grad_out.sample(n), out_c, plane, plane, gy_t);
    int offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const BasicTensor<T>& p = *parts[i];
      if constexpr (transposed) {
        matmul(p.c(), out_c, plane, p.sample(n), plane, 1, gy_t.data(), out_c, gw_t.data() + offset * out_c, out_c, true);
      } else {
        ConstMatMap<T> in(p.sample(n), p.c(), plane, Eigen::OuterStride<>(plane));
        MatMap<T> gw(g.kernel.ptr() + offset, out_c, p.c(), Eigen::OuterStride<>(channels));
        gw.noalias() += gy * in.transpose();
      }
      if (need_input[i]) {
        matmul(p.c(), plane, out_c, kernel.ptr() + offset, 1, channels, grad_out.sample(n), plane, g.inputs[i].sample(n),
               plane, false);
      }
      offset += p.c();
    }
  }
  if constexpr (transposed) {
    MatMap<T>(g.kernel.ptr(), out_c, channels, Eigen::OuterStride<>(channels)) =
        ConstMatMap<T>(gw_t.data(), channels, out_c, Eigen::OuterStride<>(out_c)).transpose();
  }
  g.bias.assign(static_cast<std::size_t>(out_c), T(0));
  for (int o = 0; o < out_c; ++o) {
    double acc = 0.0;
    for (int n = 0; n < first.n(); ++n) {
      const T* q = grad_out.plane(n, o);
      acc += detail::sum_double(q, static_cast<std::size_t>(plane));
    }
    g.bias[static_cast<std::size_t>(o)] = static_cast<T>(acc);
  }
  return g;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  relu_inplace(y);
  return y;
}

template <typename T>
void relu_inplace(BasicTensor<T>& x) {
  for (T& v : x.data()) v = v > T(0) ? v : T(0);
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  BasicTensor<T> g = grad_out;
  relu_backward_inplace(x, g);
  return g;
}

template <typename T>
void relu_backward_inplace(const BasicTensor<T>& x, BasicTensor<T>& grad) {
  require_same_shape(x.shape(), grad.shape(), "relu_backward");
  const T* xp = x.ptr();
  T* gp = grad.ptr();
  for (std::size_t i = 0; i < grad.size(); ++i) gp[i] = xp[i] > T(0) ? gp[i] : T(0);
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  const Shape& first = parts.front()->shape();
  int channels = 0;
  for (const BasicTensor<T>* p : parts) {
    const Shape& s = p->shape();
    if (s.n != first.n) throw ShapeError("concat_channels: batch mismatch n " + std::to_string(s.n) + " vs " + std::to_string(first.n));
    if (s.h != first.h) throw ShapeError("concat_channels: height mismatch h " + std::to_string(s.h) + " vs " + std::to_string(first.h));
    if (s.w != first.w) throw ShapeError("concat_channels: width mismatch w " + std::to_string(s.w) + " vs " + std::to_string(first.w));
    channels += s.c;
  }
  BasicTensor<T> out(Shape{first.n, channels, first.h, first.w});
  for (int n = 0; n < first.n; ++n) {
    T* dst = out.sample(n);
    for (const BasicTensor<T>* p : parts) {
      const std::size_t count = p->shape().sample();
      std::copy_n(p->sample(n), count, dst);
      dst += count;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const BasicTensor<T>* parts[] = {&a, &b};
  return concat_channels<T>(std::span<const BasicTensor<T>* const>(parts));
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, std::span<const int> widths) {
  int total = 0;
  for (int w : widths) {
    if (w < 0) throw ShapeError("split_channels: negative width");
    total += w;
  }
  if (total != grad.c()) {
    throw ShapeError("split_channels: widths sum to " + std::to_string(total) + " but c=" + std::to_string(grad.c()));
  }
  std::vector<BasicTensor<T>> out;
  out.reserve(widths.size());
  int first = 0;
  for (int w : widths) {
    BasicTensor<T> part(Shape{grad.n(), w, grad.h(), grad.w()});
    accumulate_channel_slice(part, grad, first);
    out.push_back(std::move(part));
    first += w;
  }
  return out;
}

template <typename T>
void accumulate_channel_slice(BasicTensor<T>& dst, const BasicTensor<T>& src, int first) {
  if (dst.n() != src.n() || dst.h() != src.h() || dst.w() != src.w() || first < 0 || first + dst.c() > src.c()) {
    throw ShapeError("accumulate_channel_slice: " + to_string(dst.shape()) + " is not a slice of " +
                     to_string(src.shape()) + " at channel " + std::to_string(first));
  }
  const std::size_t count = dst.shape().sample();
  for (int n = 0; n < dst.n(); ++n) {
    const T* s = src.plane(n, first);
    T* d = dst.sample(n);
    for (std::size_t i = 0; i < count; ++i) d[i] += s[i];
  }
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& x, const BasicTensor<T>& y) {
  BasicTensor<T> out = x;
  add_inplace(out, y);
  return out;
}

template <typename T>
void add_inplace(BasicTensor<T>& x, const BasicTensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "add");
  T* xp = x.ptr();
  const T* yp = y.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) xp[i] += yp[i];
}

template <typename T>
void axpy_inplace(BasicTensor<T>& x, T scale, const BasicTensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "axpy");
  T* xp = x.ptr();
  const T* yp = y.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) xp[i] += scale * yp[i];
}

template <typename T>
BasicTensor<T> zero_pad(const BasicTensor<T>& x, int pad) {
  if (pad < 0) throw ShapeError("zero_pad: negative pad");
  BasicTensor<T> out(Shape{x.n(), x.c(), x.h() + 2 * pad, x.w() + 2 * pad});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < x.h(); ++y)
        std::copy_n(x.plane(n, c) + static_cast<std::size_t>(y) * x.w(), x.w(),
                    out.plane(n, c) + static_cast<std::size_t>(y + pad) * out.w() + pad);
  return out;
}

template <typename T>
BasicTensor<T> zero_pad_backward(const BasicTensor<T>& grad, int pad) {
  if (pad < 0 || grad.h() < 2 * pad || grad.w() < 2 * pad) throw ShapeError("zero_pad_backward: invalid pad");
  BasicTensor<T> out(Shape{grad.n(), grad.c(), grad.h() - 2 * pad, grad.w() - 2 * pad});
  for (int n = 0; n < out.n(); ++n)
    for (int c = 0; c < out.c(); ++c)
      for (int y = 0; y < out.h(); ++y)
        std::copy_n(grad.plane(n, c) + static_cast<std::size_t>(y + pad) * grad.w() + pad, out.w(),
                    out.plane(n, c) + static_cast<std::size_t>(y) * out.w());
  return out;
}

namespace {

int reflect_index(int i, int extent) { return i < extent ? i : 2 * (extent - 1) - i; }

}  // namespace

template <typename T>
BasicTensor<T> reflect_pad(const BasicTensor<T>& x, int bottom, int right) {
  if (bottom < 0 || right < 0) throw ShapeError("reflect_pad: negative pad");
  if (bottom > 0 && bottom >= x.h()) throw ShapeError("reflect_pad: bottom pad " + std::to_string(bottom) + " >= height " + std::to_string(x.h()));
  if (right > 0 && right >= x.w()) throw ShapeError("reflect_pad: right pad " + std::to_string(right) + " >= width " + std::to_string(x.w()));
  if (bottom == 0 && right == 0) return x;
  BasicTensor<T> out(Shape{x.n(), x.c(), x.h() + bottom, x.w() + right});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (int y = 0; y < out.h(); ++y) {
        const T* row = src + static_cast<std::size_t>(reflect_index(y, x.h())) * x.w();
        for (int xx = 0; xx < out.w(); ++xx) dst[static_cast<std::size_t>(y) * out.w() + xx] = row[reflect_index(xx, x.w())];
      }
    }
  return out;
}

template <typename T>
BasicTensor<T> reflect_pad_backward(const BasicTensor<T>& grad, const Shape& original) {
  if (grad.shape() == original) return grad;
  if (grad.n() != original.n || grad.c() != original.c || grad.h() < original.h || grad.w() < original.w) {
    throw ShapeError("reflect_pad_backward: " + to_string(grad.shape()) + " is not a padding of " + to_string(original));
  }
  BasicTensor<T> out(original);
  for (int n = 0; n < original.n; ++n)
    for (int c = 0; c < original.c; ++c) {
      const T* src = grad.plane(n, c);
      T* dst = out.plane(n, c);
      for (int y = 0; y < grad.h(); ++y) {
        T* row = dst + static_cast<std::size_t>(reflect_index(y, original.h)) * original.w;
        for (int xx = 0; xx < grad.w(); ++xx) row[reflect_index(xx, original.w)] += src[static_cast<std::size_t>(y) * grad.w() + xx];
      }
    }
  return out;
}

void set_num_threads(int threads) {
  g_threads = std::max(1, threads);
  Eigen::setNbThreads(g_threads);
}

int num_threads() { return g_threads; }

#define EDCNN_INSTANTIATE_OPS(T)                                                                            \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const ConvSpec<T>&);                       \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const ConvSpec<T>&, const BasicTensor<T>&, \
                                        ConvBackwardNeeds);                                                \
  template BasicTensor<T> pointwise_conv_forward(std::span<const BasicTensor<T>* const>, const BasicTensor<T>&, \
                                                 std::span<const T>);                                       \
  template PointwiseGrads<T> pointwise_conv_backward(std::span<const BasicTensor<T>* const>, const BasicTensor<T>&, \
                                                     const BasicTensor<T>&, const std::vector<bool>&);      \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                             \
  template void relu_inplace(BasicTensor<T>&);                                                             \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template void relu_backward_inplace(const BasicTensor<T>&, BasicTensor<T>&);                             \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const>);                         \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>&, std::span<const int>);        \
  template void accumulate_channel_slice(BasicTensor<T>&, const BasicTensor<T>&, int);                     \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                               \
  template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);                                       \
  template void axpy_inplace(BasicTensor<T>&, T, const BasicTensor<T>&);                                   \
  template BasicTensor<T> zero_pad(const BasicTensor<T>&, int);                                            \
  template BasicTensor<T> zero_pad_backward(const BasicTensor<T>&, int);                                   \
  template BasicTensor<T> reflect_pad(const BasicTensor<T>&, int, int);                                    \
  template BasicTensor<T> reflect_pad_backward(const BasicTensor<T>&, const Shape&);

EDCNN_INSTANTIATE_OPS(float)
EDCNN_INSTANTIATE_OPS(double)

}  // namespace edcnn
