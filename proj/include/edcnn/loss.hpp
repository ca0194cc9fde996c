#pragma once

#include <string>
#include <vector>

#include "edcnn/extractor.hpp"
#include "edcnn/tensor.hpp"

namespace edcnn {

enum class LossMode { mse_only, perceptual_only, compound };

const char* to_string(LossMode mode);
/// Accepts "mse_only", "perceptual_only", "compound".
LossMode parse_loss_mode(const std::string& text);

struct LossConfig {
  double w_p = 0.01;
  LossMode mode = LossMode::compound;
  /// 1-based extractor stages averaged by the perceptual term.
  std::vector<int> stages_used = {1, 2, 3, 4};

  void validate() const;
};

/// "S-4321" style label for a stage subset (descending).
std::string stage_label(const std::vector<int>& stages);
/// Parses "1,2,3,4" or "S-4321".
std::vector<int> parse_stages(const std::string& text);

template <typename T>
struct LossResult {
  double value = 0.0;
  BasicTensor<T> grad;
};

/// mean((pred - target)^2); grad = 2 (pred - target) / count.
template <typename T>
LossResult<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

/// Mean over the selected stages of the per-stage feature MSE. The gradient flows
/// through the frozen extractor to pred only.
template <typename T>
LossResult<T> ms_perceptual_loss(const BasicExtractor<T>& ext, const BasicTensor<T>& pred, const BasicTensor<T>& target,
                                 const std::vector<int>& stages_used);

/// mse + w_p * perceptual in compound mode; a single term otherwise. With w_p == 0
/// the perceptual term is skipped, so the result equals mse_loss bit-for-bit.
template <typename T>
LossResult<T> compound_loss(const LossConfig& cfg, const BasicExtractor<T>& ext, const BasicTensor<T>& pred,
                            const BasicTensor<T>& target);

}  // namespace edcnn
