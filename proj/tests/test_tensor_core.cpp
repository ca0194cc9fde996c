#include <doctest.h>

#include <array>
#include <limits>

#include "edcnn/edge_enhance.hpp"
#include "edcnn/gradcheck.hpp"
#include "edcnn/ops.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace edcnn;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

template <typename T>
BasicTensor<T> ones(Shape s) {
  return BasicTensor<T>(s, T(1));
}

}  // namespace

TEST_SUITE("tensor_core") {

TEST_CASE("tensor layout is row-major nchw") {
  Tensor t(Shape{2, 3, 4, 5});
  CHECK(t.size() == 120);
  t(1, 2, 3, 4) = 7.0f;
  CHECK(t.data()[119] == 7.0f);
  t(0, 1, 0, 0) = 3.0f;
  CHECK(t.data()[20] == 3.0f);
  CHECK_THROWS_AS(Tensor(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("identity kernel reproduces the input") {
  const Tensor x = random_tensor(Shape{1, 1, 3, 3}, 1);
  const Tensor k = ones<float>(Shape{1, 1, 1, 1});
  const std::vector<float> b{0.0f};
  CHECK(bit_equal(conv2d_forward(x, ConvSpec<float>{k, b}), x));
}

TEST_CASE("summing kernel on a constant input") {
  const Tensor x = ones<float>(Shape{1, 1, 5, 5});
  const Tensor k = ones<float>(Shape{1, 1, 3, 3});
  const Tensor y = conv2d_forward(x, ConvSpec<float>{k});
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (float v : y.data()) CHECK(v == 9.0f);
}

TEST_CASE("sobel pattern on a column ramp") {
  // x[i, j] = j. The pattern with -1/-2/-1 in the left column and +1/+2/+1 in the
  // right column responds to this ramp with 8 everywhere.
  Tensor x(Shape{1, 1, 4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) x(0, 0, i, j) = static_cast<float>(j);
  Tensor k(Shape{1, 1, 3, 3});
  for (int j = 0; j < 9; ++j) k.data()[j] = static_cast<float>(kSobelPatterns[0][j]);
  const Tensor y = conv2d_forward(x, ConvSpec<float>{k});
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (float v : y.data()) CHECK(v == 8.0f);
}

TEST_CASE("conv rejects mismatched shapes with the dimension named") {
  const Tensor x(Shape{1, 2, 5, 5});
  const Tensor k(Shape{1, 3, 3, 3});
  try {
    (void)conv2d_forward(x, ConvSpec<float>{k});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("channel") != std::string::npos);
  }
  const Tensor small(Shape{1, 1, 2, 2});
  const Tensor k3(Shape{1, 1, 3, 3});
  CHECK_THROWS_AS((void)conv2d_forward(small, ConvSpec<float>{k3}), ShapeError);
  const std::vector<float> bad_bias(2);
  CHECK_THROWS_AS((void)conv2d_forward(ones<float>(Shape{1, 1, 4, 4}), ConvSpec<float>{k3, bad_bias}), ShapeError);
  const Tensor g(Shape{1, 1, 3, 3});
  CHECK_THROWS_AS((void)conv2d_backward(ones<float>(Shape{1, 1, 4, 4}), ConvSpec<float>{k3}, g), ShapeError);
}

TEST_CASE("conv matches the scalar-loop oracle over random geometries") {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const int kh = rng.uniform_index(2) ? 3 : 1;
    const int stride = 1 + static_cast<int>(rng.uniform_index(2));
    const int pad = static_cast<int>(rng.uniform_index(kh == 3 ? 2 : 1));
    const int h = kh + static_cast<int>(rng.uniform_index(9));
    const int w = kh + static_cast<int>(rng.uniform_index(9));
    const Shape xs{1 + static_cast<int>(rng.uniform_index(2)), 1 + static_cast<int>(rng.uniform_index(4)), h, w};
    const Shape ks{1 + static_cast<int>(rng.uniform_index(5)), xs.c, kh, kh};
    const Tensor x = random_tensor(xs, 100 + trial);
    const Tensor k = random_tensor(ks, 200 + trial);
    std::vector<float> b(ks.n);
    for (float& v : b) v = static_cast<float>(rng.uniform(-1, 1));

    const Tensor y = conv2d_forward(x, ConvSpec<float>{k, b, stride, pad});
    const Shape expect = conv2d_output_shape(xs, ks, stride, pad);
    CHECK(y.shape() == expect);
    CHECK(expect.h == (h + 2 * pad - kh) / stride + 1);
    CHECK(expect.w == (w + 2 * pad - kh) / stride + 1);
    const TensorD ref = oracle::conv(x, k, b, stride, pad);
    CHECK(max_abs_diff(y.cast<double>(), ref) < 1e-5);
  }
}

TEST_CASE("output shape formula over the supported range") {
  for (int h = 1; h <= 12; ++h)
    for (int kh : {1, 3})
      for (int s : {1, 2, 3})
        for (int p : {0, 1, 2}) {
          const Shape in{1, 1, h, h + 1};
          if (h + 2 * p < kh) {
            CHECK_THROWS_AS((void)conv2d_output_shape(in, Shape{1, 1, kh, kh}, s, p), ShapeError);
            continue;
          }
          const Shape out = conv2d_output_shape(in, Shape{4, 1, kh, kh}, s, p);
          CHECK(out == Shape{1, 4, (h + 2 * p - kh) / s + 1, (h + 1 + 2 * p - kh) / s + 1});
        }
}

TEST_CASE("conv backward: zero upstream gives zero gradients") {
  const Tensor x = random_tensor(Shape{2, 3, 6, 6}, 3);
  const Tensor k = random_tensor(Shape{4, 3, 3, 3}, 4);
  const std::vector<float> b(4, 0.5f);
  const ConvGrads<float> g = conv2d_backward(x, ConvSpec<float>{k, b, 1, 1}, Tensor(Shape{2, 4, 6, 6}));
  for (float v : g.input.data()) CHECK(v == 0.0f);
  for (float v : g.kernel.data()) CHECK(v == 0.0f);
  for (float v : g.bias) CHECK(v == 0.0f);
}

TEST_CASE("conv backward: identity kernel passes the gradient through") {
  const Tensor x = random_tensor(Shape{1, 1, 5, 5}, 5);
  const Tensor k = ones<float>(Shape{1, 1, 1, 1});
  const Tensor g = random_tensor(Shape{1, 1, 5, 5}, 6);
  CHECK(bit_equal(conv2d_backward(x, ConvSpec<float>{k}, g).input, g));
}

TEST_CASE("conv backward: bias gradient is the per-channel sum") {
  const Tensor x = random_tensor(Shape{2, 2, 5, 5}, 7);
  const Tensor k = random_tensor(Shape{3, 2, 3, 3}, 8);
  const std::vector<float> b(3);
  const Tensor g = random_tensor(Shape{2, 3, 5, 5}, 9);
  const ConvGrads<float> grads = conv2d_backward(x, ConvSpec<float>{k, b, 1, 1}, g);
  for (int o = 0; o < 3; ++o) {
    double s = 0;
    for (int n = 0; n < 2; ++n)
      for (int y = 0; y < 5; ++y)
        for (int xx = 0; xx < 5; ++xx) s += g(n, o, y, xx);
    CHECK(grads.bias[o] == doctest::Approx(s).epsilon(1e-5));
  }
}

TEST_CASE("conv backward is linear in the upstream gradient") {
  const TensorD x = random_tensor<double>(Shape{1, 2, 7, 6}, 10);
  const TensorD k = random_tensor<double>(Shape{3, 2, 3, 3}, 11);
  const std::vector<double> b(3);
  const TensorD g1 = random_tensor<double>(Shape{1, 3, 4, 3}, 12);
  const TensorD g2 = random_tensor<double>(Shape{1, 3, 4, 3}, 13);
  const ConvSpec<double> spec{k, b, 2, 1};
  TensorD mix = g1;
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = 2.5 * g1.data()[i] - 0.75 * g2.data()[i];
  const auto a = conv2d_backward(x, spec, g1), c = conv2d_backward(x, spec, g2), m = conv2d_backward(x, spec, mix);
  for (std::size_t i = 0; i < m.input.size(); ++i)
    CHECK(m.input.data()[i] == doctest::Approx(2.5 * a.input.data()[i] - 0.75 * c.input.data()[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < m.kernel.size(); ++i)
    CHECK(m.kernel.data()[i] == doctest::Approx(2.5 * a.kernel.data()[i] - 0.75 * c.kernel.data()[i]).epsilon(1e-12));
}

TEST_CASE("float conv backward matches the double path across geometries") {
  // Float stride-1 convs take the padded-grid GEMM route; double keeps im2col/col2im.
  Rng rng(41);
  for (int trial = 0; trial < 40; ++trial) {
    const int kh = rng.uniform_index(3) ? 3 : 1;
    const int stride = rng.uniform_index(3) ? 1 : 2;
    const int pad = static_cast<int>(rng.uniform_index(kh == 3 ? 3 : 2));
    const int h = kh + static_cast<int>(rng.uniform_index(12));
    const int w = kh + static_cast<int>(rng.uniform_index(12));
    const int out_c = rng.uniform_index(2) ? 1 + static_cast<int>(rng.uniform_index(6)) : 16 + static_cast<int>(rng.uniform_index(20));
    const Shape xs{1 + static_cast<int>(rng.uniform_index(3)), 1 + static_cast<int>(rng.uniform_index(9)), h, w};
    const Shape ks{out_c, xs.c, kh, kh};
    const Tensor x = random_tensor(xs, 300 + trial);
    const Tensor k = random_tensor(ks, 400 + trial);
    const std::vector<float> b(static_cast<std::size_t>(out_c), 0.25f);
    const Tensor g = random_tensor(conv2d_output_shape(xs, ks, stride, pad), 500 + trial);
    const std::vector<double> bd(b.begin(), b.end());
    const ConvGrads<float> f = conv2d_backward(x, ConvSpec<float>{k, b, stride, pad}, g);
    const ConvGrads<double> d =
        conv2d_backward(x.cast<double>(), ConvSpec<double>{k.cast<double>(), bd, stride, pad}, g.cast<double>());
    CHECK(max_abs_diff(f.input.cast<double>(), d.input) < 1e-4);
    CHECK(max_abs_diff(f.kernel.cast<double>(), d.kernel) < 1e-4);
    for (int o = 0; o < out_c; ++o) CHECK(f.bias[o] == doctest::Approx(d.bias[o]).epsilon(1e-5));
  }
}

TEST_CASE("conv backward agrees with finite differences") {
  // Probe loss sum(G . conv(x)) on a 1x1x6x6 input with a 2x1x3x3 kernel. The
  // check runs in double: single-precision rounding of the loss alone exceeds the
  // tolerance at this step size.
  TensorD x = random_tensor<double>(Shape{1, 1, 6, 6}, 14, 0, 1);
  TensorD k = random_tensor<double>(Shape{2, 1, 3, 3}, 15);
  std::vector<double> b{0.1, -0.2};
  const TensorD g = random_tensor<double>(Shape{1, 2, 6, 6}, 16);
  DiffProblem<double> p;
  p.names = {"x", "kernel", "bias"};
  p.params = {x.data(), k.data(), std::span<double>(b)};
  p.loss = [&] {
    const TensorD y = conv2d_forward(x, ConvSpec<double>{k, b, 1, 1});
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * g.data()[i];
    return s;
  };
  p.gradient = [&] {
    const ConvGrads<double> gr = conv2d_backward(x, ConvSpec<double>{k, b, 1, 1}, g);
    return std::vector<std::vector<double>>{{gr.input.data().begin(), gr.input.data().end()},
                                            {gr.kernel.data().begin(), gr.kernel.data().end()},
                                            gr.bias};
  };
  const FiniteDiffReport r = finite_diff_check(p, 1e-3);
  CHECK(r.max_relative_error < 1e-3);
  CHECK(r.params.size() == 3);
  CHECK(r.params[0].checked == 36);
}

TEST_CASE("strided conv backward agrees with finite differences in double") {
  TensorD x = random_tensor<double>(Shape{2, 2, 7, 8}, 17);
  TensorD k = random_tensor<double>(Shape{3, 2, 3, 3}, 18);
  std::vector<double> b{0.1, 0.0, -0.3};
  const TensorD g = random_tensor<double>(Shape{2, 3, 4, 4}, 19);
  DiffProblem<double> p;
  p.names = {"x", "kernel", "bias"};
  p.params = {x.data(), k.data(), std::span<double>(b)};
  p.loss = [&] {
    const TensorD y = conv2d_forward(x, ConvSpec<double>{k, b, 2, 1});
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * g.data()[i];
    return s;
  };
  p.gradient = [&] {
    const auto gr = conv2d_backward(x, ConvSpec<double>{k, b, 2, 1}, g);
    return std::vector<std::vector<double>>{{gr.input.data().begin(), gr.input.data().end()},
                                            {gr.kernel.data().begin(), gr.kernel.data().end()},
                                            gr.bias};
  };
  CHECK(finite_diff_check(p, 1e-3).max_relative_error < 1e-7);
}

TEST_CASE("conv backward can skip outputs") {
  const Tensor x = random_tensor(Shape{1, 2, 5, 5}, 20);
  const Tensor k = random_tensor(Shape{2, 2, 3, 3}, 21);
  const Tensor g = random_tensor(Shape{1, 2, 5, 5}, 22);
  const ConvSpec<float> spec{k, {}, 1, 1};
  const auto full = conv2d_backward(x, spec, g);
  const auto only_params = conv2d_backward(x, spec, g, ConvBackwardNeeds{false, true});
  const auto only_input = conv2d_backward(x, spec, g, ConvBackwardNeeds{true, false});
  CHECK(only_params.input.empty());
  CHECK(only_input.kernel.empty());
  CHECK(bit_equal(only_params.kernel, full.kernel));
  CHECK(bit_equal(only_input.input, full.input));
}

TEST_CASE("conv is bit-deterministic") {
  const Tensor x = random_tensor(Shape{4, 33, 20, 20}, 23);
  const Tensor k = random_tensor(Shape{32, 33, 3, 3}, 24);
  const std::vector<float> b(32, 0.01f);
  const Tensor y1 = conv2d_forward(x, ConvSpec<float>{k, b, 1, 1});
  const Tensor y2 = conv2d_forward(x, ConvSpec<float>{k, b, 1, 1});
  CHECK(bit_equal(y1, y2));
  const Tensor g = random_tensor(y1.shape(), 25);
  const auto a = conv2d_backward(x, ConvSpec<float>{k, b, 1, 1}, g);
  const auto c = conv2d_backward(x, ConvSpec<float>{k, b, 1, 1}, g);
  CHECK(bit_equal(a.input, c.input));
  CHECK(bit_equal(a.kernel, c.kernel));
  CHECK(a.bias == c.bias);
}

TEST_CASE("relu forward and backward") {
  const Tensor x(Shape{1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
  const Tensor y = relu_forward(x);
  CHECK(y.data()[0] == 0.0f);
  CHECK(y.data()[1] == 0.0f);
  CHECK(y.data()[2] == 2.0f);
  const Tensor g(Shape{1, 1, 1, 3}, {5.0f, 5.0f, 5.0f});
  const Tensor gx = relu_backward(x, g);
  CHECK(gx.data()[0] == 0.0f);
  CHECK(gx.data()[1] == 0.0f);
  CHECK(gx.data()[2] == 5.0f);
  CHECK(bit_equal(relu_backward(y, g), gx));
  const Tensor zero(Shape{1, 1, 1, 3});
  const Tensor gz = relu_backward(x, zero);
  for (float v : gz.data()) CHECK(v == 0.0f);
}

TEST_CASE("relu gradient agrees with finite differences away from the kink") {
  TensorD x = random_tensor<double>(Shape{1, 2, 5, 5}, 26);
  for (double& v : x.data())
    if (std::abs(v) < 1e-2) v = 0.5;
  DiffProblem<double> p;
  p.names = {"x"};
  p.params = {x.data()};
  p.loss = [&] {
    const TensorD y = relu_forward(x);
    double s = 0;
    for (double v : y.data()) s += v;
    return s;
  };
  p.gradient = [&] {
    const TensorD g = relu_backward(x, TensorD(x.shape(), 1.0));
    return std::vector<std::vector<double>>{{g.data().begin(), g.data().end()}};
  };
  CHECK(finite_diff_check(p, 1e-3).max_relative_error < 1e-4);
}

TEST_CASE("concat and split") {
  const Tensor a = random_tensor(Shape{2, 1, 3, 4}, 27);
  const Tensor b = random_tensor(Shape{2, 1, 3, 4}, 28);
  const Tensor ab = concat_channels(a, b);
  REQUIRE(ab.shape() == Shape{2, 2, 3, 4});
  CHECK(ab(1, 0, 2, 3) == a(1, 0, 2, 3));
  CHECK(ab(1, 1, 2, 3) == b(1, 0, 2, 3));

  const Tensor g = random_tensor(Shape{2, 2, 3, 4}, 29);
  const std::array<int, 2> widths{1, 1};
  const auto parts = split_channels(g, std::span<const int>(widths));
  REQUIRE(parts.size() == 2);
  CHECK(bit_equal(concat_channels(parts[0], parts[1]), g));
  CHECK(parts[0](1, 0, 1, 1) == g(1, 0, 1, 1));
  CHECK(parts[1](1, 0, 1, 1) == g(1, 1, 1, 1));

  const Tensor* single[] = {&a};
  CHECK(bit_equal(concat_channels<float>(std::span<const Tensor* const>(single)), a));

  const Tensor wide = concat_channels(Tensor(Shape{1, 33, 4, 4}), Tensor(Shape{1, 32, 4, 4}));
  CHECK(wide.c() == 65);

  CHECK_THROWS_AS((void)concat_channels(Tensor(Shape{1, 1, 3, 3}), Tensor(Shape{1, 1, 3, 4})), ShapeError);
  CHECK_THROWS_AS((void)concat_channels(Tensor(Shape{1, 1, 3, 3}), Tensor(Shape{2, 1, 3, 3})), ShapeError);
}

TEST_CASE("concat then split is the identity for random widths") {
  Rng rng(30);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> parts;
    std::vector<int> widths;
    const int k = 1 + static_cast<int>(rng.uniform_index(4));
    for (int i = 0; i < k; ++i) {
      widths.push_back(1 + static_cast<int>(rng.uniform_index(5)));
      parts.push_back(random_tensor(Shape{2, widths.back(), 3, 5}, 1000 + trial * 10 + i));
    }
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : parts) ptrs.push_back(&t);
    const Tensor cat = concat_channels<float>(std::span<const Tensor* const>(ptrs));
    const auto back = split_channels(cat, std::span<const int>(widths));
    for (int i = 0; i < k; ++i) CHECK(bit_equal(back[i], parts[i]));
  }
}

TEST_CASE("pointwise conv over parts equals conv over the concatenation") {
  const Tensor a = random_tensor(Shape{2, 5, 6, 7}, 31);
  const Tensor b = random_tensor(Shape{2, 3, 6, 7}, 32);
  const Tensor k = random_tensor(Shape{4, 8, 1, 1}, 33);
  const std::vector<float> bias{0.1f, 0.2f, -0.3f, 0.0f};
  const Tensor* parts[] = {&a, &b};
  const std::span<const Tensor* const> ps(parts);
  const Tensor cat = concat_channels(a, b);
  const Tensor y_ref = conv2d_forward(cat, ConvSpec<float>{k, bias});
  const Tensor y = pointwise_conv_forward<float>(ps, k, bias);
  CHECK(max_abs_diff(y, y_ref) < 1e-5);

  const Tensor g = random_tensor(y.shape(), 34);
  const auto ref = conv2d_backward(cat, ConvSpec<float>{k, bias}, g);
  const auto pg = pointwise_conv_backward<float>(ps, k, g, {true, true});
  CHECK(max_abs_diff(pg.kernel, ref.kernel) < 1e-4);
  for (int o = 0; o < 4; ++o) CHECK(pg.bias[o] == doctest::Approx(ref.bias[o]).epsilon(1e-5));
  const std::array<int, 2> widths{5, 3};
  const auto split = split_channels(ref.input, std::span<const int>(widths));
  CHECK(max_abs_diff(pg.inputs[0], split[0]) < 1e-5);
  CHECK(max_abs_diff(pg.inputs[1], split[1]) < 1e-5);

  const auto partial = pointwise_conv_backward<float>(ps, k, g, {true, false});
  CHECK(partial.inputs[1].empty());
}

TEST_CASE("add") {
  const Tensor x = random_tensor(Shape{1, 2, 3, 3}, 35);
  CHECK(bit_equal(add(x, Tensor(x.shape())), x));
  const Tensor a(Shape{1, 1, 1, 2}, {1.0f, 2.0f});
  const Tensor b(Shape{1, 1, 1, 2}, {3.0f, 4.0f});
  const Tensor c = add(a, b);
  CHECK(c.data()[0] == 4.0f);
  CHECK(c.data()[1] == 6.0f);
  CHECK_THROWS_AS((void)add(a, x), ShapeError);
  Tensor d = a;
  axpy_inplace(d, 2.0f, b);
  CHECK(d.data()[1] == 10.0f);
}

TEST_CASE("zero pad round trip") {
  const Tensor x = random_tensor(Shape{1, 2, 3, 4}, 36);
  const Tensor p = zero_pad(x, 2);
  REQUIRE(p.shape() == Shape{1, 2, 7, 8});
  CHECK(p(0, 1, 0, 0) == 0.0f);
  CHECK(p(0, 1, 2, 2) == x(0, 1, 0, 0));
  CHECK(bit_equal(zero_pad_backward(p, 2), x));
}

TEST_CASE("reflect pad and its adjoint") {
  TensorD x(Shape{1, 1, 3, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<double>(i);
  const TensorD p = reflect_pad(x, 2, 1);
  REQUIRE(p.shape() == Shape{1, 1, 5, 5});
  CHECK(p(0, 0, 3, 0) == x(0, 0, 1, 0));
  CHECK(p(0, 0, 4, 0) == x(0, 0, 0, 0));
  CHECK(p(0, 0, 0, 4) == x(0, 0, 0, 2));
  // <pad(x), g> == <x, pad^T(g)>
  const TensorD g = random_tensor<double>(p.shape(), 37);
  const TensorD gt = reflect_pad_backward(g, x.shape());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < p.size(); ++i) lhs += p.data()[i] * g.data()[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data()[i] * gt.data()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  CHECK_THROWS_AS((void)reflect_pad(x, 3, 0), ShapeError);
}

TEST_CASE("finite difference harness on a linear function") {
  std::vector<double> p{0.3, -1.2, 4.0, 0.0};
  DiffProblem<double> prob;
  prob.names = {"p"};
  prob.params = {std::span<double>(p)};
  prob.loss = [&] { return p[0] + p[1] + p[2] + p[3]; };
  prob.gradient = [&] { return std::vector<std::vector<double>>{{1, 1, 1, 1}}; };
  const std::vector<double> before = p;
  const FiniteDiffReport r = finite_diff_check(prob, 1e-3);
  CHECK(r.max_relative_error < 1e-6);
  CHECK(p == before);
}

TEST_CASE("finite difference harness on a one-layer conv mse") {
  Tensor x = random_tensor(Shape{1, 1, 4, 4}, 38, 0, 1);
  Tensor k = random_tensor(Shape{1, 1, 3, 3}, 39);
  const Tensor target = random_tensor(Shape{1, 1, 4, 4}, 40, 0, 1);
  DiffProblem<float> prob;
  prob.names = {"kernel"};
  prob.params = {k.data()};
  prob.loss = [&] {
    const Tensor y = conv2d_forward(x, ConvSpec<float>{k, {}, 1, 1});
    return oracle::mse(y, target);
  };
  prob.gradient = [&] {
    const Tensor y = conv2d_forward(x, ConvSpec<float>{k, {}, 1, 1});
    Tensor g(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) g.data()[i] = 2.0f * (y.data()[i] - target.data()[i]) / 16.0f;
    const auto gr = conv2d_backward(x, ConvSpec<float>{k, {}, 1, 1}, g);
    return std::vector<std::vector<float>>{{gr.kernel.data().begin(), gr.kernel.data().end()}};
  };
  CHECK(finite_diff_check(prob, 1e-3).max_relative_error < 1e-4);
}

TEST_CASE("finite difference harness detects a wrong gradient and non-finite losses") {
  std::vector<double> p{1.0, 2.0};
  DiffProblem<double> prob;
  prob.names = {"p"};
  prob.params = {std::span<double>(p)};
  prob.loss = [&] { return p[0] * p[0] + p[1]; };
  prob.gradient = [&] { return std::vector<std::vector<double>>{{2 * p[0], 1.5}}; };
  const FiniteDiffReport r = finite_diff_check(prob, 1e-4);
  CHECK(r.max_relative_error > 0.3);
  CHECK(r.params[0].worst_index == 1);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1.0, 0.5) == doctest::Approx(0.5));

  prob.loss = [] { return std::numeric_limits<double>::quiet_NaN(); };
  CHECK_THROWS_AS((void)finite_diff_check(prob, 1e-4), NonFiniteError);
}

TEST_CASE("finite difference sampling bounds the probe count") {
  std::vector<double> p(500, 0.5);
  DiffProblem<double> prob;
  prob.names = {"p"};
  prob.params = {std::span<double>(p)};
  prob.loss = [&] {
    double s = 0;
    for (double v : p) s += v * v;
    return s;
  };
  prob.gradient = [&] {
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2 * p[i];
    return std::vector<std::vector<double>>{g};
  };
  const auto r = finite_diff_check(prob, 1e-5, ProbeSelection{32, 1});
  CHECK(r.params[0].checked == 32);
  CHECK(r.max_relative_error < 1e-6);
}

}  // TEST_SUITE
