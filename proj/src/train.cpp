#include "edcnn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "edcnn/checkpoint.hpp"
#include "edcnn/metrics.hpp"
#include "edcnn/ops.hpp"

namespace edcnn {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
  if (epochs <= 0) throw std::invalid_argument("epochs must be positive");
  if (images_per_batch <= 0) throw std::invalid_argument("images_per_batch must be positive");
  if (patches_per_image <= 0) throw std::invalid_argument("patches_per_image must be positive");
  if (patch_size < 3) throw std::invalid_argument("patch_size must be at least 3");
  if (micro_batch <= 0) throw std::invalid_argument("micro_batch must be positive");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be non-negative");
  loss.validate();
  if (loss.mode != LossMode::mse_only && patch_size < FrozenExtractor::kMinExtent) {
    throw std::invalid_argument("perceptual losses need patch_size >= 16");
  }
}

namespace {

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string TrainingLog::to_csv(bool include_wall_time) const {
  std::string out = std::string(kHeader) + "\n";
  for (const EpochRecord& r : epochs) {
    out += std::to_string(r.epoch) + "," + format_value(r.mean_train_loss) + "," + format_value(r.mean_test_psnr) + "," +
           format_value(r.mean_test_ssim) + "," + format_value(include_wall_time ? r.wall_seconds : 0.0) + "\n";
  }
  return out;
}

void TrainingLog::write_csv(const std::filesystem::path& path, bool include_wall_time) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write training log " + path.string());
  f << to_csv(include_wall_time);
}

template <typename T>
void accumulate_grads(Grads<T>& dst, const Grads<T>& src) {
  auto d = dst.parameters();
  const auto s = src.parameters();
  if (d.size() != s.size()) throw ShapeError("accumulate_grads: gradient trees differ");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].values.size() != s[i].values.size()) throw ShapeError("accumulate_grads: size mismatch for " + d[i].name);
    for (std::size_t j = 0; j < d[i].values.size(); ++j) d[i].values[j] += s[i].values[j];
  }
}

Tensor denoise(const Model& model, const Tensor& image) {
  Tensor y = infer(model, image);
  for (float& v : y.data()) v = std::clamp(v, 0.0f, 1.0f);
  return y;
}

SetQuality evaluate_set(const Model& model, const std::vector<ImagePair>& set) {
  SetQuality q;
  if (set.empty()) return q;
  for (const ImagePair& p : set) {
    const Tensor y = denoise(model, p.low);
    q.mean_psnr += psnr(y, p.high);
    q.mean_ssim += ssim(y, p.high);
  }
  q.mean_psnr /= static_cast<double>(set.size());
  q.mean_ssim /= static_cast<double>(set.size());
  return q;
}

SetQuality baseline_quality(const std::vector<ImagePair>& set) {
  SetQuality q;
  if (set.empty()) return q;
  for (const ImagePair& p : set) {
    q.mean_psnr += psnr(p.low, p.high);
    q.mean_ssim += ssim(p.low, p.high);
  }
  q.mean_psnr /= static_cast<double>(set.size());
  q.mean_ssim /= static_cast<double>(set.size());
  return q;
}

TrainResult train(Model model, const std::vector<ImagePair>& train_set, const std::vector<ImagePair>* test_set,
                  const FrozenExtractor& extractor, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training split");
  const int n_images = static_cast<int>(train_set.size());
  const int n_batches = n_images / cfg.images_per_batch;
  if (n_batches == 0) {
    throw std::invalid_argument("train: " + std::to_string(n_images) + " training images cannot fill one batch of " +
                                std::to_string(cfg.images_per_batch));
  }
  for (const ImagePair& p : train_set) {
    if (p.low.h() < cfg.patch_size || p.low.w() < cfg.patch_size) {
      throw std::invalid_argument("train: image " + p.name + " smaller than patch_size " + std::to_string(cfg.patch_size));
    }
  }

  TrainResult result{std::move(model), {}, 0};
  Model& m = result.model;
  AdamW optimizer(m, cfg.optimizer);
  const int batch_patches = cfg.patches_per_batch();
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n_images));
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(cfg.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)));
    for (int i = n_images - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)], order[order_rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
    }
    Rng patch_rng(derive_seed(cfg.seed, 0x70617463ULL, static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0.0;
    for (int b = 0; b < n_batches; ++b) {
      Tensor input(Shape{batch_patches, 1, cfg.patch_size, cfg.patch_size});
      Tensor target(input.shape());
      for (int i = 0; i < cfg.images_per_batch; ++i) {
        const ImagePair& pair = train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(b * cfg.images_per_batch + i)])];
        PatchBatch pb = sample_patches(pair, cfg.patches_per_image, cfg.patch_size, patch_rng);
        const std::size_t offset = static_cast<std::size_t>(i) * cfg.patches_per_image * pb.input.shape().sample();
        std::copy(pb.input.data().begin(), pb.input.data().end(), input.data().begin() + static_cast<std::ptrdiff_t>(offset));
        std::copy(pb.target.data().begin(), pb.target.data().end(), target.data().begin() + static_cast<std::ptrdiff_t>(offset));
      }

      Grads<float> grads = Grads<float>::zeros(m.config);
      double batch_loss = 0.0;
      for (int first = 0; first < batch_patches; first += cfg.micro_batch) {
        const int count = std::min(cfg.micro_batch, batch_patches - first);
        const float weight = static_cast<float>(count) / static_cast<float>(batch_patches);
        const Tensor x = input.slice_batch(first, count);
        const Tensor t = target.slice_batch(first, count);
        ForwardResult<float> fr = forward(m, x);
        LossResult<float> loss = compound_loss(cfg.loss, extractor, fr.output, t);
        batch_loss += loss.value * static_cast<double>(count) / static_cast<double>(batch_patches);
        for (float& g : loss.grad.data()) g *= weight;
        accumulate_grads(grads, backward(m, fr.cache, loss.grad));
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1));
      }
      try {
        optimizer.step(m, grads, cfg.learning_rate);
      } catch (const NonFiniteError& e) {
        throw TrainingError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) + ")");
      }
      loss_sum += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_train_loss = loss_sum / n_batches;
    rec.mean_test_psnr = std::numeric_limits<double>::quiet_NaN();
    rec.mean_test_ssim = std::numeric_limits<double>::quiet_NaN();
    if (test_set && !test_set->empty()) {
      const SetQuality q = evaluate_set(m, *test_set);
      rec.mean_test_psnr = q.mean_psnr;
      rec.mean_test_ssim = q.mean_ssim;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(rec);

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && epoch % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch%04d.edc", epoch);
      save_checkpoint(m, cfg.checkpoint_dir / name);
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, m, rec);
  }
  result.optimizer_steps = optimizer.state().step;
  return result;
}

template void accumulate_grads(Grads<float>&, const Grads<float>&);
template void accumulate_grads(Grads<double>&, const Grads<double>&);

}  // namespace edcnn
