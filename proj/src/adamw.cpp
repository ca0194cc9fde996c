#include "edcnn/adamw.hpp"

#include <cmath>
#include <string>

namespace edcnn {

AdamWState make_adamw_state(std::span<const ParamView<float>> params, const AdamWHyper& hyper) {
  AdamWState s;
  s.hyper = hyper;
  for (const ParamView<float>& p : params) {
    s.m.emplace_back(p.values.size(), 0.0f);
    s.v.emplace_back(p.values.size(), 0.0f);
  }
  return s;
}

void adamw_step(std::span<const ParamView<float>> params, std::span<const ParamView<const float>> grads, AdamWState& state,
                double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ShapeError("adamw_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].values.size();
    if (grads[i].values.size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw ShapeError("adamw_step: size mismatch for " + params[i].name);
    }
    for (float g : grads[i].values) {
      if (!std::isfinite(g)) throw NonFiniteError("adamw_step: non-finite gradient in " + params[i].name + "; step aborted");
    }
  }

  const AdamWHyper& h = state.hyper;
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::span<float> p = params[i].values;
    std::span<const float> g = grads[i].values;
    std::vector<float>& m = state.m[i];
    std::vector<float>& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
      const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + h.eps) + h.weight_decay * p[j];
      p[j] = static_cast<float>(p[j] - lr * update);
    }
  }
  state.step = t;
}

AdamW::AdamW(Model& model, const AdamWHyper& hyper) {
  const auto params = model.parameters();
  state_ = make_adamw_state(params, hyper);
}

void AdamW::step(Model& model, const Grads<float>& grads, double lr) {
  if (!model.config.same_topology(grads.config)) throw ShapeError("AdamW::step: gradient tree does not match the model");
  const auto params = model.parameters();
  const auto g = grads.parameters();
  adamw_step(params, g, state_, lr);
  model.touch();
}

}  // namespace edcnn
