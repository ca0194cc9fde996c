#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "edcnn/kv_config.hpp"
#include "edcnn/model.hpp"
#include "edcnn/train.hpp"

namespace edcnn::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitIo = 2 };

inline constexpr const char* kToolVersion = "0.1.0";

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
  std::filesystem::path config;
  std::vector<std::string> argv;
};

/// Everything a --config file may set. Defaults reproduce the reference training setup.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t extractor_seed = 1;
  std::filesystem::path extractor_path;  // empty: seeded extractor

  static const std::vector<std::string>& keys();
  /// Applies the file over the defaults; unknown keys and bad values raise ConfigError.
  static RunConfig from_file(const KeyValueConfig& file);
  /// key = value text that from_file() maps back to this configuration.
  std::string to_text() const;

  FrozenExtractor make_extractor() const;
};

struct SynthOptions {
  std::filesystem::path out_dir;
  int count = 10;
  int size = 64;
  double dose = 0.25;
  int first_index = 0;
};

struct TrainOptions {
  std::filesystem::path data_dir;
  std::filesystem::path test_dir;
  std::filesystem::path out_dir;
  std::optional<std::string> loss;
  std::optional<int> epochs;
};

struct DenoiseOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::filesystem::path output;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;  // CSV destination; defaults to the current directory
};

struct GradcheckOptions {
  int size = 16;
  double eps = 1e-6;
  /// Kernel elements probed per tensor; biases and Sobel factors are always probed in full.
  std::size_t kernel_samples = 48;
  bool exhaustive = false;
  double tolerance = 1e-3;
  /// Probe at the raw initialization instead of the gain-preserving rescale of it.
  /// At the raw point the early-block gradients are close to double rounding noise.
  bool at_init = false;
  std::filesystem::path out_dir;  // report + manifest destination; empty prints only
  /// Test hook: edits the analytic gradient before comparison.
  std::function<void(Grads<double>&)> tamper;
};

int cmd_synth(const GlobalOptions& g, const SynthOptions& o, std::ostream& out, std::ostream& err);
int cmd_train(const GlobalOptions& g, const TrainOptions& o, std::ostream& out, std::ostream& err);
int cmd_denoise(const GlobalOptions& g, const DenoiseOptions& o, std::ostream& out, std::ostream& err);
int cmd_eval(const GlobalOptions& g, const EvalOptions& o, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GlobalOptions& g, const GradcheckOptions& o, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // population
};
Stat mean_std(const std::vector<double>& values);

}  // namespace edcnn::cli
