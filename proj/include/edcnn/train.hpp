#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "edcnn/adamw.hpp"
#include "edcnn/dataset.hpp"
#include "edcnn/extractor.hpp"
#include "edcnn/loss.hpp"
#include "edcnn/model.hpp"

namespace edcnn {

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 200;
  int images_per_batch = 32;
  int patches_per_image = 4;
  int patch_size = 64;
  LossConfig loss;
  AdamWHyper optimizer;
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many epochs into checkpoint_dir (0 disables).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  /// Patches per forward/backward pass. Gradients are summed over micro-batches, so
  /// this changes memory use only.
  int micro_batch = 16;
  /// When false the wall_seconds column holds 0 so logs stay byte-reproducible.
  bool log_wall_time = false;

  void validate() const;
  int patches_per_batch() const { return images_per_batch * patches_per_image; }
};

struct EpochRecord {
  int epoch = 0;
  double mean_train_loss = 0.0;
  double mean_test_psnr = 0.0;  // NaN without a test split
  double mean_test_ssim = 0.0;
  double wall_seconds = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;

  static constexpr const char* kHeader = "epoch,mean_train_loss,mean_test_psnr,mean_test_ssim,wall_seconds";
  std::string to_csv(bool include_wall_time) const;
  void write_csv(const std::filesystem::path& path, bool include_wall_time) const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainHooks {
  /// Called after each epoch (1-based) with the updated model and its log row.
  std::function<void(int, const Model&, const EpochRecord&)> on_epoch_end;
};

struct TrainResult {
  Model model;
  TrainingLog log;
  std::uint64_t optimizer_steps = 0;
};

/// AdamW training on random patches. Each epoch shuffles the images, forms
/// floor(n / images_per_batch) batches of images_per_batch x patches_per_image
/// patches, and takes one optimizer step per batch.
TrainResult train(Model model, const std::vector<ImagePair>& train_set, const std::vector<ImagePair>* test_set,
                  const FrozenExtractor& extractor, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Network output clamped to [0,1].
Tensor denoise(const Model& model, const Tensor& image);

struct SetQuality {
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

/// Mean PSNR/SSIM of denoise(low) against high over the set.
SetQuality evaluate_set(const Model& model, const std::vector<ImagePair>& set);
/// Mean PSNR/SSIM of the untouched low-dose images against high.
SetQuality baseline_quality(const std::vector<ImagePair>& set);

template <typename T>
void accumulate_grads(Grads<T>& dst, const Grads<T>& src);

}  // namespace edcnn
