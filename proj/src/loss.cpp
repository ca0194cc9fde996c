#include "edcnn/loss.hpp"

#include <algorithm>
#include <stdexcept>

#include "edcnn/ops.hpp"

namespace edcnn {

const char* to_string(LossMode mode) {
  switch (mode) {
    case LossMode::mse_only: return "mse_only";
    case LossMode::perceptual_only: return "perceptual_only";
    case LossMode::compound: return "compound";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& text) {
  if (text == "mse_only") return LossMode::mse_only;
  if (text == "perceptual_only") return LossMode::perceptual_only;
  if (text == "compound") return LossMode::compound;
  throw std::invalid_argument("unknown loss mode \"" + text + "\" (expected mse_only, perceptual_only or compound)");
}

void LossConfig::validate() const {
  if (!(w_p >= 0.0)) throw std::invalid_argument("LossConfig: w_p must be non-negative");
  if (mode != LossMode::mse_only && stages_used.empty()) throw std::invalid_argument("LossConfig: stages_used is empty");
  for (int s : stages_used) {
    if (s < 1 || s > 4) throw std::invalid_argument("LossConfig: stage " + std::to_string(s) + " outside 1..4");
  }
}

std::string stage_label(const std::vector<int>& stages) {
  std::vector<int> sorted = stages;
  std::sort(sorted.rbegin(), sorted.rend());
  std::string out = "S-";
  for (int s : sorted) out += std::to_string(s);
  return out;
}

std::vector<int> parse_stages(const std::string& text) {
  std::vector<int> out;
  std::string body = text;
  if (body.rfind("S-", 0) == 0) {
    for (char ch : body.substr(2)) {
      if (ch < '1' || ch > '4') throw std::invalid_argument("bad stage label \"" + text + "\"");
      out.push_back(ch - '0');
    }
  } else {
    std::size_t pos = 0;
    while (pos <= body.size()) {
      std::size_t next = body.find(',', pos);
      std::string item = body.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
      if (item.size() != 1 || item[0] < '1' || item[0] > '4') throw std::invalid_argument("bad stage list \"" + text + "\"");
      out.push_back(item[0] - '0');
      if (next == std::string::npos) break;
      pos = next + 1;
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty() || std::adjacent_find(out.begin(), out.end()) != out.end()) {
    throw std::invalid_argument("stage set \"" + text + "\" is empty or repeats a stage");
  }
  return out;
}

template <typename T>
LossResult<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "mse_loss");
  LossResult<T> r;
  r.grad = BasicTensor<T>(pred.shape());
  const std::size_t count = pred.size();
  if (count == 0) return r;
  const T* p = pred.ptr();
  const T* t = target.ptr();
  T* g = r.grad.ptr();
  const T scale = static_cast<T>(2.0 / static_cast<double>(count));
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const T d = p[i] - t[i];
    acc += static_cast<double>(d) * static_cast<double>(d);
    g[i] = scale * d;
  }
  r.value = acc / static_cast<double>(count);
  return r;
}

template <typename T>
LossResult<T> ms_perceptual_loss(const BasicExtractor<T>& ext, const BasicTensor<T>& pred, const BasicTensor<T>& target,
                                 const std::vector<int>& stages_used) {
  if (stages_used.empty()) throw std::invalid_argument("ms_perceptual_loss: empty stages_used");
  require_same_shape(pred.shape(), target.shape(), "ms_perceptual_loss");
  int last = 0;
  for (int s : stages_used) {
    if (s < 1 || s > BasicExtractor<T>::kStages) throw std::invalid_argument("ms_perceptual_loss: stage " + std::to_string(s) + " outside 1..4");
    last = std::max(last, s);
  }
  const auto pred_trace = ext.trace(pred, last);
  const auto target_trace = ext.trace(target, last);

  std::vector<BasicTensor<T>> stage_grads(static_cast<std::size_t>(last));
  const double inv_stages = 1.0 / static_cast<double>(stages_used.size());
  LossResult<T> r;
  for (int s : stages_used) {
    const std::size_t si = static_cast<std::size_t>(s - 1);
    LossResult<T> m = mse_loss(pred_trace.out[si], target_trace.out[si]);
    r.value += m.value * inv_stages;
    for (T& g : m.grad.data()) g *= static_cast<T>(inv_stages);
    stage_grads[si] = std::move(m.grad);
  }
  r.grad = ext.backward(pred_trace, stage_grads);
  return r;
}

template <typename T>
LossResult<T> compound_loss(const LossConfig& cfg, const BasicExtractor<T>& ext, const BasicTensor<T>& pred,
                            const BasicTensor<T>& target) {
  cfg.validate();
  switch (cfg.mode) {
    case LossMode::mse_only: return mse_loss(pred, target);
    case LossMode::perceptual_only: return ms_perceptual_loss(ext, pred, target, cfg.stages_used);
    case LossMode::compound: break;
  }
  LossResult<T> r = mse_loss(pred, target);
  if (cfg.w_p == 0.0) return r;
  const LossResult<T> p = ms_perceptual_loss(ext, pred, target, cfg.stages_used);
  r.value = r.value + cfg.w_p * p.value;
  axpy_inplace(r.grad, static_cast<T>(cfg.w_p), p.grad);
  return r;
}

template LossResult<float> mse_loss(const BasicTensor<float>&, const BasicTensor<float>&);
template LossResult<double> mse_loss(const BasicTensor<double>&, const BasicTensor<double>&);
template LossResult<float> ms_perceptual_loss(const BasicExtractor<float>&, const BasicTensor<float>&, const BasicTensor<float>&,
                                              const std::vector<int>&);
template LossResult<double> ms_perceptual_loss(const BasicExtractor<double>&, const BasicTensor<double>&, const BasicTensor<double>&,
                                               const std::vector<int>&);
template LossResult<float> compound_loss(const LossConfig&, const BasicExtractor<float>&, const BasicTensor<float>&, const BasicTensor<float>&);
template LossResult<double> compound_loss(const LossConfig&, const BasicExtractor<double>&, const BasicTensor<double>&,
                                          const BasicTensor<double>&);

}  // namespace edcnn
