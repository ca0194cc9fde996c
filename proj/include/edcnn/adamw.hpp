#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "edcnn/model.hpp"

namespace edcnn {

/// Optimizer defaults; weight decay is decoupled from the gradient moments.
struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  AdamWHyper hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

AdamWState make_adamw_state(std::span<const ParamView<float>> params, const AdamWHyper& hyper = {});

/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p).
/// On a shape mismatch or a non-finite gradient nothing is modified and the step
/// counter stays put.
void adamw_step(std::span<const ParamView<float>> params, std::span<const ParamView<const float>> grads, AdamWState& state,
                double lr);

/// Model-level convenience: owns the state for one model and bumps its generation.
class AdamW {
 public:
  explicit AdamW(Model& model, const AdamWHyper& hyper = {});
  void step(Model& model, const Grads<float>& grads, double lr);
  const AdamWState& state() const { return state_; }

 private:
  AdamWState state_;
};

}  // namespace edcnn
