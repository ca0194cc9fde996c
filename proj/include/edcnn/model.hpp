#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "edcnn/edge_enhance.hpp"
#include "edcnn/tensor.hpp"

namespace edcnn {

/// Network topology. The flag pairs map onto the ablation variants:
/// (edge, dense) = (false, false) BCNN, (false, true) BCNN+DC, (true, true) EDCNN.
struct ModelConfig {
  int n_blocks = 8;
  int block_filters = 32;
  int sobel_filters = 32;
  bool use_edge_module = true;
  bool use_dense_connections = true;
  std::uint64_t seed = 0;

  static ModelConfig bcnn();
  static ModelConfig bcnn_dc();
  static ModelConfig edcnn();

  /// Throws std::invalid_argument on a non-positive size or a Sobel count that is not a multiple of 4.
  void validate() const;
  /// Width of the tensor the edge stage hands to the blocks (edge maps + image, or just the image).
  int edge_channels() const { return use_edge_module ? sobel_filters + 1 : 1; }
  int block_input_channels(int block) const;
  int block_output_channels(int block) const { return block == n_blocks - 1 ? 1 : block_filters; }
  std::string variant_name() const;

  /// Topology equality; the seed is not part of the parameter layout.
  bool same_topology(const ModelConfig& other) const;
};

template <typename T>
struct ConvParams {
  BasicTensor<T> kernel;
  std::vector<T> bias;
};

/// One dense block: 1x1 fusion conv (ReLU), then 3x3 conv (ReLU except in the last block).
template <typename T>
struct BlockParams {
  ConvParams<T> fuse;
  ConvParams<T> feature;
};

/// Named view of one parameter buffer. Rank-1 parameters have a single dim.
template <typename T>
struct ParamView {
  std::string name;
  std::vector<int> dims;
  std::span<T> values;
};

/// Names and dims of every trainable parameter, in checkpoint order.
std::vector<std::pair<std::string, std::vector<int>>> parameter_layout(const ModelConfig& config);

template <typename T>
class BasicModel {
 public:
  ModelConfig config;
  SobelBank<T> bank;  // empty when the edge module is disabled
  std::vector<BlockParams<T>> blocks;

  /// All-zero parameters with the layout implied by config. Also used as the gradient tree.
  static BasicModel zeros(const ModelConfig& config);

  std::vector<ParamView<T>> parameters();
  std::vector<ParamView<const T>> parameters() const;

  template <typename U>
  BasicModel<U> cast() const {
    BasicModel<U> out;
    out.config = config;
    out.bank.factors.assign(bank.factors.begin(), bank.factors.end());
    for (const BlockParams<T>& b : blocks) {
      out.blocks.push_back(BlockParams<U>{
          ConvParams<U>{b.fuse.kernel.template cast<U>(), std::vector<U>(b.fuse.bias.begin(), b.fuse.bias.end())},
          ConvParams<U>{b.feature.kernel.template cast<U>(), std::vector<U>(b.feature.bias.begin(), b.feature.bias.end())}});
    }
    return out;
  }

  /// Invalidates outstanding forward caches. Call after mutating parameters.
  void touch() { ++generation_; }
  std::uint64_t generation() const { return generation_; }

 private:
  std::uint64_t generation_ = 0;
};

using Model = BasicModel<float>;
/// Gradients share the model's parameter tree.
template <typename T>
using Grads = BasicModel<T>;

/// Sobel factors at 1, conv kernels uniform on [-b, b] with b = sqrt(1 / fan_in),
/// biases zero. Deterministic in config.seed.
Model init_model(const ModelConfig& config);

template <typename T>
struct ForwardCache {
  const void* model = nullptr;
  std::uint64_t generation = 0;
  BasicTensor<T> input;
  BasicTensor<T> edge;                   // edge stage output; empty without the edge module
  std::vector<BasicTensor<T>> fused;     // post-ReLU 1x1 outputs
  std::vector<BasicTensor<T>> features;  // 3x3 outputs (post-ReLU except the last block)
};

template <typename T>
struct ForwardResult {
  BasicTensor<T> output;
  ForwardCache<T> cache;
};

/// Raised when backward receives a cache from a different model or a stale parameter set.
class StaleCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
ForwardResult<T> forward(const BasicModel<T>& model, const BasicTensor<T>& x);

/// Forward pass without retaining intermediates.
template <typename T>
BasicTensor<T> infer(const BasicModel<T>& model, const BasicTensor<T>& x);

template <typename T>
Grads<T> backward(const BasicModel<T>& model, const ForwardCache<T>& cache, const BasicTensor<T>& grad_y);

template <typename T>
std::size_t num_params(const BasicModel<T>& model);

std::size_t num_params(const ModelConfig& config);

}  // namespace edcnn
