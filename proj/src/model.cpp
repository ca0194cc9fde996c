#include "edcnn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "edcnn/ops.hpp"
#include "edcnn/rng.hpp"

namespace edcnn {

ModelConfig ModelConfig::bcnn() {
  ModelConfig c;
  c.use_edge_module = false;
  c.use_dense_connections = false;
  return c;
}

ModelConfig ModelConfig::bcnn_dc() {
  ModelConfig c;
  c.use_edge_module = false;
  c.use_dense_connections = true;
  return c;
}

ModelConfig ModelConfig::edcnn() { return ModelConfig{}; }

void ModelConfig::validate() const {
  if (n_blocks <= 0) throw std::invalid_argument("ModelConfig: n_blocks must be positive, got " + std::to_string(n_blocks));
  if (block_filters <= 0) throw std::invalid_argument("ModelConfig: block_filters must be positive, got " + std::to_string(block_filters));
  if (use_edge_module && (sobel_filters <= 0 || sobel_filters % 4 != 0)) {
    throw std::invalid_argument("ModelConfig: sobel_filters must be a positive multiple of 4, got " + std::to_string(sobel_filters));
  }
}

int ModelConfig::block_input_channels(int block) const {
  if (block == 0) return edge_channels();
  return block_filters + (use_dense_connections ? edge_channels() : 0);
}

std::string ModelConfig::variant_name() const {
  if (use_edge_module && use_dense_connections) return "EDCNN";
  if (use_edge_module) return "BCNN+EM";
  if (use_dense_connections) return "BCNN+DC";
  return "BCNN";
}

bool ModelConfig::same_topology(const ModelConfig& o) const {
  return n_blocks == o.n_blocks && block_filters == o.block_filters && use_edge_module == o.use_edge_module &&
         use_dense_connections == o.use_dense_connections && (!use_edge_module || sobel_filters == o.sobel_filters);
}

std::vector<std::pair<std::string, std::vector<int>>> parameter_layout(const ModelConfig& config) {
  config.validate();
  std::vector<std::pair<std::string, std::vector<int>>> layout;
  if (config.use_edge_module) layout.push_back({"ee.factors", {config.sobel_filters}});
  for (int k = 0; k < config.n_blocks; ++k) {
    const std::string prefix = "block" + std::to_string(k);
    const int in = config.block_input_channels(k);
    const int out = config.block_output_channels(k);
    layout.push_back({prefix + ".conv1x1", {config.block_filters, in, 1, 1}});
    layout.push_back({prefix + ".conv1x1.bias", {config.block_filters}});
    layout.push_back({prefix + ".conv3x3", {out, config.block_filters, 3, 3}});
    layout.push_back({prefix + ".conv3x3.bias", {out}});
  }
  return layout;
}

template <typename T>
BasicModel<T> BasicModel<T>::zeros(const ModelConfig& config) {
  config.validate();
  BasicModel m;
  m.config = config;
  if (config.use_edge_module) m.bank.factors.assign(static_cast<std::size_t>(config.sobel_filters), T(0));
  for (int k = 0; k < config.n_blocks; ++k) {
    const int in = config.block_input_channels(k);
    const int out = config.block_output_channels(k);
    m.blocks.push_back(BlockParams<T>{
        ConvParams<T>{BasicTensor<T>(Shape{config.block_filters, in, 1, 1}),
                      std::vector<T>(static_cast<std::size_t>(config.block_filters), T(0))},
        ConvParams<T>{BasicTensor<T>(Shape{out, config.block_filters, 3, 3}), std::vector<T>(static_cast<std::size_t>(out), T(0))}});
  }
  return m;
}

namespace {

std::vector<int> dims_of(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

template <typename Model, typename V>
std::vector<ParamView<V>> collect(Model& m) {
  std::vector<ParamView<V>> out;
  if (m.config.use_edge_module) {
    out.push_back({"ee.factors", {static_cast<int>(m.bank.factors.size())}, std::span<V>(m.bank.factors)});
  }
  for (std::size_t k = 0; k < m.blocks.size(); ++k) {
    auto& b = m.blocks[k];
    const std::string prefix = "block" + std::to_string(k);
    out.push_back({prefix + ".conv1x1", dims_of(b.fuse.kernel.shape()), b.fuse.kernel.data()});
    out.push_back({prefix + ".conv1x1.bias", {static_cast<int>(b.fuse.bias.size())}, std::span<V>(b.fuse.bias)});
    out.push_back({prefix + ".conv3x3", dims_of(b.feature.kernel.shape()), b.feature.kernel.data()});
    out.push_back({prefix + ".conv3x3.bias", {static_cast<int>(b.feature.bias.size())}, std::span<V>(b.feature.bias)});
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<ParamView<T>> BasicModel<T>::parameters() {
  return collect<BasicModel<T>, T>(*this);
}

template <typename T>
std::vector<ParamView<const T>> BasicModel<T>::parameters() const {
  return collect<const BasicModel<T>, const T>(*this);
}

Model init_model(const ModelConfig& config) {
  Model m = Model::zeros(config);
  if (config.use_edge_module) std::fill(m.bank.factors.begin(), m.bank.factors.end(), 1.0f);
  std::uint64_t index = 0;
  for (BlockParams<float>& b : m.blocks) {
    for (BasicTensor<float>* kernel : {&b.fuse.kernel, &b.feature.kernel}) {
      const Shape& s = kernel->shape();
      const double bound = std::sqrt(1.0 / static_cast<double>(s.c * s.h * s.w));
      Rng rng(derive_seed(config.seed, 0x6b65726eULL, index++));
      for (float& v : kernel->data()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
  return m;
}

namespace {

template <typename T>
ConvSpec<T> fuse_spec(const BlockParams<T>& b) {
  return ConvSpec<T>{.kernel = b.fuse.kernel, .bias = b.fuse.bias, .stride = 1, .padding = 0};
}

template <typename T>
ConvSpec<T> feature_spec(const BlockParams<T>& b) {
  return ConvSpec<T>{.kernel = b.feature.kernel, .bias = b.feature.bias, .stride = 1, .padding = 1};
}

template <typename T>
void check_model_input(const BasicTensor<T>& x) {
  if (x.c() != 1) throw ShapeError("model input must have 1 channel, got c=" + std::to_string(x.c()));
  if (x.h() < 3) throw ShapeError("model input height h=" + std::to_string(x.h()) + " below 3");
  if (x.w() < 3) throw ShapeError("model input width w=" + std::to_string(x.w()) + " below 3");
}

// Runs the blocks; when `cache` is non-null every intermediate is kept.
template <typename T>
BasicTensor<T> run_blocks(const BasicModel<T>& model, const BasicTensor<T>& x, const BasicTensor<T>& edge,
                          ForwardCache<T>* cache) {
  const ModelConfig& cfg = model.config;
  const BasicTensor<T>& e = cfg.use_edge_module ? edge : x;
  BasicTensor<T> prev;
  for (int k = 0; k < cfg.n_blocks; ++k) {
    const BlockParams<T>& b = model.blocks[static_cast<std::size_t>(k)];
    BasicTensor<T> fused;
    if (k == 0) {
      fused = conv2d_forward(e, fuse_spec(b));
    } else if (cfg.use_dense_connections) {
      const BasicTensor<T>* parts[] = {&prev, &e};
      fused = pointwise_conv_forward<T>(parts, b.fuse.kernel, b.fuse.bias);
    } else {
      fused = conv2d_forward(prev, fuse_spec(b));
    }
    relu_inplace(fused);
    BasicTensor<T> feat = conv2d_forward(fused, feature_spec(b));
    if (k != cfg.n_blocks - 1) relu_inplace(feat);
    if (cache) {
      cache->fused.push_back(std::move(fused));
      if (k > 0) cache->features.push_back(std::move(prev));
    }
    prev = std::move(feat);
  }
  if (cache) {
    // The last block's output is needed only as the residual sum, but the cache keeps
    // one entry per block.
    cache->features.push_back(prev);
  }
  add_inplace(prev, x);
  return prev;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const BasicModel<T>& model, const BasicTensor<T>& x) {
  check_model_input(x);
  ForwardResult<T> r;
  r.cache.model = &model;
  r.cache.generation = model.generation();
  r.cache.input = x;
  if (model.config.use_edge_module) r.cache.edge = ee_forward(model.bank, x);
  r.output = run_blocks(model, x, r.cache.edge, &r.cache);
  return r;
}

template <typename T>
BasicTensor<T> infer(const BasicModel<T>& model, const BasicTensor<T>& x) {
  check_model_input(x);
  BasicTensor<T> edge;
  if (model.config.use_edge_module) edge = ee_forward(model.bank, x);
  return run_blocks<T>(model, x, edge, nullptr);
}

template <typename T>
Grads<T> backward(const BasicModel<T>& model, const ForwardCache<T>& cache, const BasicTensor<T>& grad_y) {
  if (cache.model != &model || cache.generation != model.generation()) {
    throw StaleCacheError("backward: forward cache does not belong to the current parameters of this model");
  }
  const ModelConfig& cfg = model.config;
  if (static_cast<int>(cache.features.size()) != cfg.n_blocks) throw StaleCacheError("backward: incomplete forward cache");
  require_same_shape(grad_y.shape(), cache.input.shape(), "backward grad_y");

  Grads<T> g = Grads<T>::zeros(cfg);
  const BasicTensor<T>& e = cfg.use_edge_module ? cache.edge : cache.input;
  BasicTensor<T> grad_e;
  if (cfg.use_edge_module) grad_e = BasicTensor<T>(e.shape());

  // The residual branch contributes grad_y to the input gradient, which no
  // parameter depends on, so it is not materialized here.
  BasicTensor<T> grad = grad_y;
  for (int k = cfg.n_blocks - 1; k >= 0; --k) {
    const BlockParams<T>& b = model.blocks[static_cast<std::size_t>(k)];
    BlockParams<T>& gb = g.blocks[static_cast<std::size_t>(k)];
    const BasicTensor<T>& fused = cache.fused[static_cast<std::size_t>(k)];

    if (k != cfg.n_blocks - 1) relu_backward_inplace(cache.features[static_cast<std::size_t>(k)], grad);
    ConvGrads<T> g3 = conv2d_backward(fused, feature_spec(b), grad);
    gb.feature.kernel = std::move(g3.kernel);
    gb.feature.bias = std::move(g3.bias);

    BasicTensor<T> grad_fused = std::move(g3.input);
    relu_backward_inplace(fused, grad_fused);

    const bool need_input = k > 0 || cfg.use_edge_module;
    const BasicTensor<T>& prev = k > 0 ? cache.features[static_cast<std::size_t>(k - 1)] : e;
    if (k > 0 && cfg.use_dense_connections) {
      const BasicTensor<T>* parts[] = {&prev, &e};
      PointwiseGrads<T> pg = pointwise_conv_backward<T>(parts, b.fuse.kernel, grad_fused, {true, cfg.use_edge_module});
      gb.fuse.kernel = std::move(pg.kernel);
      gb.fuse.bias = std::move(pg.bias);
      if (cfg.use_edge_module) add_inplace(grad_e, pg.inputs[1]);
      grad = std::move(pg.inputs[0]);
      continue;
    }
    ConvGrads<T> g1 = conv2d_backward(prev, fuse_spec(b), grad_fused, ConvBackwardNeeds{.input = need_input});
    gb.fuse.kernel = std::move(g1.kernel);
    gb.fuse.bias = std::move(g1.bias);

    if (k > 0) {
      grad = std::move(g1.input);
    } else if (cfg.use_edge_module) {
      add_inplace(grad_e, g1.input);
    }
  }

  if (cfg.use_edge_module) {
    EdgeGrads<T> eg = ee_backward(model.bank, cache.input, grad_e, false);
    g.bank.factors = std::move(eg.factors);
  }
  return g;
}

template <typename T>
std::size_t num_params(const BasicModel<T>& model) {
  std::size_t total = 0;
  for (const auto& p : model.parameters()) total += p.values.size();
  return total;
}

std::size_t num_params(const ModelConfig& config) {
  std::size_t total = 0;
  for (const auto& [name, dims] : parameter_layout(config)) {
    std::size_t count = 1;
    for (int d : dims) count *= static_cast<std::size_t>(d);
    total += count;
  }
  return total;
}

template class BasicModel<float>;
template class BasicModel<double>;
template ForwardResult<float> forward(const BasicModel<float>&, const BasicTensor<float>&);
template ForwardResult<double> forward(const BasicModel<double>&, const BasicTensor<double>&);
template BasicTensor<float> infer(const BasicModel<float>&, const BasicTensor<float>&);
template BasicTensor<double> infer(const BasicModel<double>&, const BasicTensor<double>&);
template Grads<float> backward(const BasicModel<float>&, const ForwardCache<float>&, const BasicTensor<float>&);
template Grads<double> backward(const BasicModel<double>&, const ForwardCache<double>&, const BasicTensor<double>&);
template std::size_t num_params(const BasicModel<float>&);
template std::size_t num_params(const BasicModel<double>&);

}  // namespace edcnn
