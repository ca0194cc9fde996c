#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "edcnn/model.hpp"
#include "edcnn/tensor.hpp"

namespace edcnn {

/// One halving stage: stride-2 3x3 conv + ReLU, then stride-1 3x3 conv + ReLU.
template <typename T>
struct ExtractorStage {
  ConvParams<T> down;
  ConvParams<T> conv;
};

enum class ExtractorSource { seeded, file };

/// Frozen multi-scale feature network used by the perceptual loss and the feature
/// distance metric. Weights are fixed at construction; there is no mutable access.
/// Inputs are reflect-padded on the bottom/right to a multiple of 16.
template <typename T>
class BasicExtractor {
 public:
  static constexpr int kStages = 4;
  static constexpr int kMinExtent = 16;
  static constexpr std::array<int, kStages> kChannels = {16, 32, 64, 128};

  /// Fan-in uniform kernels, zero biases.
  static BasicExtractor seeded(std::uint64_t seed);
  /// Reads an "EDX1" container; see save().
  static BasicExtractor load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::vector<ExtractorStage<T>>& stages() const { return stages_; }
  ExtractorSource source() const { return source_; }

  /// Intermediates of one forward pass, kept for backward.
  struct Trace {
    Shape input_shape;
    BasicTensor<T> padded;
    std::vector<BasicTensor<T>> down;  // post-ReLU stride-2 outputs
    std::vector<BasicTensor<T>> out;   // post-ReLU stage outputs
  };

  /// Stage s (1-based) output has shape (n, kChannels[s-1], H/2^s, W/2^s) for the padded extent.
  std::vector<BasicTensor<T>> forward(const BasicTensor<T>& x) const;
  /// Runs stages 1..last_stage.
  Trace trace(const BasicTensor<T>& x, int last_stage = kStages) const;
  /// Input gradient given per-stage output gradients (empty entries contribute nothing).
  /// Weights get no gradient.
  BasicTensor<T> backward(const Trace& trace, std::span<const BasicTensor<T>> stage_grads) const;

  template <typename U>
  BasicExtractor<U> cast() const {
    BasicExtractor<U> e;
    e.source_ = source_;
    for (const ExtractorStage<T>& s : stages_) {
      e.stages_.push_back(ExtractorStage<U>{
          ConvParams<U>{s.down.kernel.template cast<U>(), std::vector<U>(s.down.bias.begin(), s.down.bias.end())},
          ConvParams<U>{s.conv.kernel.template cast<U>(), std::vector<U>(s.conv.bias.begin(), s.conv.bias.end())}});
    }
    return e;
  }

 private:
  template <typename U>
  friend class BasicExtractor;

  BasicExtractor() = default;

  std::vector<ExtractorStage<T>> stages_;
  ExtractorSource source_ = ExtractorSource::seeded;
};

using FrozenExtractor = BasicExtractor<float>;

/// Bottom/right reflect padding needed to reach a multiple of 16.
int extractor_pad(int extent);

}  // namespace edcnn
