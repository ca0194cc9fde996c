#include <doctest.h>

#include <cstring>
#include <map>
#include <set>

#include "edcnn/gradcheck.hpp"
#include "edcnn/model.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace edcnn;
using testing::random_tensor;

namespace {

double probe(const TensorD& y, const TensorD& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
  return s;
}

/// Kernels scaled up and biases drawn so activations stay well away from zero and
/// gradients in early blocks are not lost in rounding.
BasicModel<double> gradcheck_point(const ModelConfig& cfg) {
  BasicModel<double> m = init_model(cfg).cast<double>();
  Rng rng(derive_seed(cfg.seed, 99));
  for (auto& b : m.blocks)
    for (ConvParams<double>* c : {&b.fuse, &b.feature}) {
      for (double& v : c->kernel.data()) v *= std::sqrt(6.0);
      for (double& v : c->bias) v = rng.uniform(-0.05, 0.05);
    }
  for (double& f : m.bank.factors) f = rng.uniform(0.5, 1.5);
  return m;
}

FiniteDiffReport model_gradcheck(const ModelConfig& cfg, std::size_t samples) {
  BasicModel<double> m = gradcheck_point(cfg);
  const TensorD x = random_tensor<double>(Shape{1, 1, 16, 16}, 7, 0, 1);
  const TensorD r = random_tensor<double>(Shape{1, 1, 16, 16}, 8);
  DiffProblem<double> p;
  for (ParamView<double>& v : m.parameters()) {
    p.names.push_back(v.name);
    p.params.push_back(v.values);
  }
  p.loss = [&] { return probe(infer(m, x), r); };
  p.gradient = [&] {
    const ForwardResult<double> f = forward(m, x);
    Grads<double> g = backward(m, f.cache, r);
    std::vector<std::vector<double>> out;
    for (const ParamView<double>& v : g.parameters()) out.emplace_back(v.values.begin(), v.values.end());
    return out;
  };
  return finite_diff_check(p, 1e-6, ProbeSelection{samples, 3});
}

}  // namespace

TEST_SUITE("edcnn_model") {

TEST_CASE("default layout names and shapes") {
  const auto layout = parameter_layout(ModelConfig{});
  REQUIRE(layout.size() == 1 + 8 * 4);
  CHECK(layout[0].first == "ee.factors");
  CHECK(layout[0].second == std::vector<int>{32});
  CHECK(layout[1].first == "block0.conv1x1");
  CHECK(layout[1].second == std::vector<int>{32, 33, 1, 1});
  CHECK(layout[2].first == "block0.conv1x1.bias");
  CHECK(layout[3].first == "block0.conv3x3");
  CHECK(layout[3].second == std::vector<int>{32, 32, 3, 3});
  CHECK(layout[5].second == std::vector<int>{32, 65, 1, 1});
  CHECK(layout[31].first == "block7.conv3x3");
  CHECK(layout[31].second == std::vector<int>{1, 32, 3, 3});
  CHECK(layout[32].second == std::vector<int>{1});
  std::set<std::string> names;
  for (const auto& [n, d] : layout) names.insert(n);
  CHECK(names.size() == layout.size());
}

TEST_CASE("parameter counts") {
  CHECK(num_params(ModelConfig{}) == 80929);
  CHECK(num_params(init_model(ModelConfig{})) == 80929);
  // BCNN with one block of 4 filters: a 4x1x1x1 fusion conv with 4 biases, then a
  // 1x4x3x3 output conv with 1 bias.
  ModelConfig tiny = ModelConfig::bcnn();
  tiny.n_blocks = 1;
  tiny.block_filters = 4;
  CHECK(num_params(tiny) == (4 + 4) + (36 + 1));
  ModelConfig wide;
  wide.block_filters = 64;
  CHECK(num_params(wide) > 2 * num_params(ModelConfig{}));
}

TEST_CASE("ablation configurations") {
  CHECK_FALSE(ModelConfig::bcnn().use_edge_module);
  CHECK_FALSE(ModelConfig::bcnn().use_dense_connections);
  CHECK(ModelConfig::bcnn_dc().use_dense_connections);
  CHECK_FALSE(ModelConfig::bcnn_dc().use_edge_module);
  CHECK(ModelConfig::edcnn().use_edge_module);
  CHECK(ModelConfig::bcnn_dc().block_input_channels(3) == 33);
  CHECK(ModelConfig::bcnn().block_input_channels(3) == 32);
  CHECK(ModelConfig::bcnn().block_input_channels(0) == 1);
  CHECK(ModelConfig::edcnn().block_input_channels(0) == 33);
  CHECK(ModelConfig::edcnn().block_input_channels(1) == 65);

  // BCNN names are a subset of BCNN+DC names; only the fusion widths differ.
  std::map<std::string, std::vector<int>> dc;
  for (const auto& [n, d] : parameter_layout(ModelConfig::bcnn_dc())) dc[n] = d;
  for (const auto& [n, d] : parameter_layout(ModelConfig::bcnn())) {
    REQUIRE(dc.count(n) == 1);
    if (n.find("conv1x1") == std::string::npos || n.find(".bias") != std::string::npos || n.rfind("block0", 0) == 0)
      CHECK(dc[n] == d);
  }
  CHECK(parameter_layout(ModelConfig::bcnn()).size() == parameter_layout(ModelConfig::bcnn_dc()).size());
}

TEST_CASE("invalid configurations are rejected") {
  ModelConfig c;
  c.n_blocks = 0;
  CHECK_THROWS_AS(init_model(c), std::invalid_argument);
  c = ModelConfig{};
  c.sobel_filters = 30;
  CHECK_THROWS_AS(init_model(c), std::invalid_argument);
  c = ModelConfig{};
  c.block_filters = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("initialization") {
  ModelConfig cfg;
  cfg.seed = 5;
  const Model a = init_model(cfg), b = init_model(cfg);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(std::memcmp(pa[i].values.data(), pb[i].values.data(), pa[i].values.size_bytes()) == 0);
  for (float f : a.bank.factors) CHECK(f == 1.0f);
  for (const auto& blk : a.blocks) {
    for (float v : blk.fuse.bias) CHECK(v == 0.0f);
    const double bound = std::sqrt(1.0 / blk.fuse.kernel.c());
    for (float v : blk.fuse.kernel.data()) CHECK(std::abs(v) <= bound);
    const double bound3 = std::sqrt(1.0 / (9.0 * blk.feature.kernel.c()));
    for (float v : blk.feature.kernel.data()) CHECK(std::abs(v) <= bound3 + 1e-7);
  }
  cfg.seed = 6;
  const Model c = init_model(cfg);
  CHECK_FALSE(bit_equal(c.blocks[0].fuse.kernel, a.blocks[0].fuse.kernel));
  CHECK(init_model(ModelConfig::bcnn()).bank.factors.empty());
}

TEST_CASE("forward matches the layer-by-layer oracle") {
  ModelConfig cfg;
  cfg.seed = 42;
  const Model m = init_model(cfg);
  const Tensor x = random_tensor(Shape{1, 1, 16, 16}, 42, 0, 1);
  const Tensor y = infer(m, x);
  const TensorD ref = oracle::model_forward(m, x);
  CHECK(testing::max_abs_diff(y.cast<double>(), ref) < 1e-6);
  CHECK(bit_equal(forward(m, x).output, y));

  for (ModelConfig v : {ModelConfig::bcnn(), ModelConfig::bcnn_dc()}) {
    v.seed = 42;
    const Model mv = init_model(v);
    CHECK(testing::max_abs_diff(infer(mv, x).cast<double>(), oracle::model_forward(mv, x)) < 1e-6);
  }
}

TEST_CASE("shape preservation and residual identity") {
  Model m = init_model(ModelConfig{});
  m.blocks.back().feature.kernel.fill(0.0f);
  for (float& b : m.blocks.back().feature.bias) b = 0.0f;
  m.touch();
  for (const auto [h, w] : {std::pair{64, 64}, std::pair{37, 41}, std::pair{3, 5}}) {
    const Tensor x = random_tensor(Shape{1, 1, h, w}, h * 100 + w, 0, 1);
    const Tensor y = infer(m, x);
    CHECK(y.shape() == x.shape());
    CHECK(bit_equal(y, x));
  }
  const Model fresh = init_model(ModelConfig{});
  const Tensor x2 = random_tensor(Shape{2, 1, 37, 41}, 1, 0, 1);
  CHECK(infer(fresh, x2).shape() == x2.shape());
  CHECK_THROWS_AS((void)infer(fresh, Tensor(Shape{1, 2, 8, 8})), ShapeError);
  CHECK_THROWS_AS((void)infer(fresh, Tensor(Shape{1, 1, 2, 8})), ShapeError);
}

TEST_CASE("backward: zero upstream, ablation tree, stale cache") {
  Model m = init_model(ModelConfig{});
  const Tensor x = random_tensor(Shape{1, 1, 12, 12}, 9, 0, 1);
  const ForwardResult<float> f = forward(m, x);
  const Grads<float> g = backward(m, f.cache, Tensor(x.shape()));
  for (const auto& v : g.parameters())
    for (float e : v.values) CHECK(e == 0.0f);

  const Model b = init_model(ModelConfig::bcnn());
  const auto fb = forward(b, x);
  const Grads<float> gb = backward(b, fb.cache, x);
  for (const auto& v : gb.parameters()) CHECK(v.name != "ee.factors");
  CHECK(gb.bank.factors.empty());

  CHECK_THROWS_AS((void)backward(b, f.cache, x), StaleCacheError);
  m.touch();
  CHECK_THROWS_AS((void)backward(m, f.cache, x), StaleCacheError);
}

TEST_CASE("forward and backward are bit-deterministic") {
  const Model m = init_model(ModelConfig{});
  const Tensor x = random_tensor(Shape{2, 1, 20, 20}, 10, 0, 1);
  const Tensor r = random_tensor(x.shape(), 11);
  const auto f1 = forward(m, x), f2 = forward(m, x);
  CHECK(bit_equal(f1.output, f2.output));
  const Grads<float> g1 = backward(m, f1.cache, r), g2 = backward(m, f2.cache, r);
  const auto p1 = g1.parameters(), p2 = g2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK(std::memcmp(p1[i].values.data(), p2[i].values.data(), p1[i].values.size_bytes()) == 0);
}

TEST_CASE("full-model gradient check for every variant") {
  for (ModelConfig cfg : {ModelConfig::bcnn(), ModelConfig::bcnn_dc(), ModelConfig::edcnn()}) {
    CAPTURE(cfg.variant_name());
    cfg.seed = 42;
    const FiniteDiffReport r = model_gradcheck(cfg, 32);
    CHECK(r.max_relative_error < 1e-3);
    if (cfg.use_edge_module) {
      REQUIRE(r.params.front().name == "ee.factors");
      CHECK(r.params.front().checked == 32);
    }
  }
}

TEST_CASE("gradients computed in single precision track the double ones") {
  ModelConfig cfg;
  cfg.seed = 3;
  const Model m = init_model(cfg);
  const Tensor x = random_tensor(Shape{1, 1, 16, 16}, 12, 0, 1);
  const Tensor r = random_tensor(x.shape(), 13);
  const Grads<float> gf = backward(m, forward(m, x).cache, r);
  const BasicModel<double> md = m.cast<double>();
  const Grads<double> gd = backward(md, forward(md, x.cast<double>()).cache, r.cast<double>());
  const auto pf = gf.parameters();
  const auto pd = gd.parameters();
  for (std::size_t i = 0; i < pf.size(); ++i) {
    double num = 0, den = 0;
    for (std::size_t j = 0; j < pf[i].values.size(); ++j) {
      const double d = pf[i].values[j] - pd[i].values[j];
      num += d * d;
      den += pd[i].values[j] * pd[i].values[j];
    }
    CAPTURE(pf[i].name);
    CHECK(std::sqrt(num) <= 1e-3 * std::sqrt(den) + 1e-12);
  }
}

}  // TEST_SUITE
