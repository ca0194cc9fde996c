#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "edcnn/checkpoint.hpp"
#include "edcnn/dataset.hpp"
#include "edcnn/gradcheck.hpp"
#include "edcnn/image_io.hpp"
#include "edcnn/loss.hpp"
#include "edcnn/metrics.hpp"
#include "edcnn/ops.hpp"
#include "edcnn/phantom.hpp"
#include "edcnn/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace edcnn::cli {

// ---------------------------------------------------------------------------
// configuration

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "n_blocks",       "block_filters",  "sobel_filters",     "edge_module",  "dense_connections", "seed",
      "learning_rate",  "epochs",         "images_per_batch",  "patches_per_image", "patch_size",   "loss",
      "w_p",            "stages",         "beta1",             "beta2",        "adam_eps",          "weight_decay",
      "checkpoint_every", "micro_batch",  "log_wall_time",     "extractor_seed", "extractor_path"};
  return k;
}

namespace {

int as_int(const KeyValueConfig& f, const std::string& key, std::int64_t v) {
  if (v < INT32_MIN || v > INT32_MAX) f.fail(key, "value out of range");
  return static_cast<int>(v);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

RunConfig RunConfig::from_file(const KeyValueConfig& f) {
  f.check_known(std::set<std::string>(keys().begin(), keys().end()));
  RunConfig c;
  if (auto v = f.get_int("n_blocks")) c.model.n_blocks = as_int(f, "n_blocks", *v);
  if (auto v = f.get_int("block_filters")) c.model.block_filters = as_int(f, "block_filters", *v);
  if (auto v = f.get_int("sobel_filters")) c.model.sobel_filters = as_int(f, "sobel_filters", *v);
  if (auto v = f.get_bool("edge_module")) c.model.use_edge_module = *v;
  if (auto v = f.get_bool("dense_connections")) c.model.use_dense_connections = *v;
  if (auto v = f.get_u64("seed")) c.model.seed = c.train.seed = *v;
  if (auto v = f.get_double("learning_rate")) c.train.learning_rate = *v;
  if (auto v = f.get_int("epochs")) c.train.epochs = as_int(f, "epochs", *v);
  if (auto v = f.get_int("images_per_batch")) c.train.images_per_batch = as_int(f, "images_per_batch", *v);
  if (auto v = f.get_int("patches_per_image")) c.train.patches_per_image = as_int(f, "patches_per_image", *v);
  if (auto v = f.get_int("patch_size")) c.train.patch_size = as_int(f, "patch_size", *v);
  if (auto v = f.get_string("loss")) {
    try {
      c.train.loss.mode = parse_loss_mode(*v);
    } catch (const std::invalid_argument& e) {
      f.fail("loss", e.what());
    }
  }
  if (auto v = f.get_double("w_p")) c.train.loss.w_p = *v;
  if (auto v = f.get_string("stages")) {
    try {
      c.train.loss.stages_used = parse_stages(*v);
    } catch (const std::invalid_argument& e) {
      f.fail("stages", e.what());
    }
  }
  if (auto v = f.get_double("beta1")) c.train.optimizer.beta1 = *v;
  if (auto v = f.get_double("beta2")) c.train.optimizer.beta2 = *v;
  if (auto v = f.get_double("adam_eps")) c.train.optimizer.eps = *v;
  if (auto v = f.get_double("weight_decay")) c.train.optimizer.weight_decay = *v;
  if (auto v = f.get_int("checkpoint_every")) c.train.checkpoint_every = as_int(f, "checkpoint_every", *v);
  if (auto v = f.get_int("micro_batch")) c.train.micro_batch = as_int(f, "micro_batch", *v);
  if (auto v = f.get_bool("log_wall_time")) c.train.log_wall_time = *v;
  if (auto v = f.get_u64("extractor_seed")) c.extractor_seed = *v;
  if (auto v = f.get_string("extractor_path")) c.extractor_path = *v;

  try {
    c.model.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return c;
}

std::string RunConfig::to_text() const {
  std::string s;
  auto line = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  line("n_blocks", std::to_string(model.n_blocks));
  line("block_filters", std::to_string(model.block_filters));
  line("sobel_filters", std::to_string(model.sobel_filters));
  line("edge_module", model.use_edge_module ? "true" : "false");
  line("dense_connections", model.use_dense_connections ? "true" : "false");
  line("seed", std::to_string(train.seed));
  line("learning_rate", fmt_double(train.learning_rate));
  line("epochs", std::to_string(train.epochs));
  line("images_per_batch", std::to_string(train.images_per_batch));
  line("patches_per_image", std::to_string(train.patches_per_image));
  line("patch_size", std::to_string(train.patch_size));
  line("loss", to_string(train.loss.mode));
  line("w_p", fmt_double(train.loss.w_p));
  line("stages", stage_label(train.loss.stages_used));
  line("beta1", fmt_double(train.optimizer.beta1));
  line("beta2", fmt_double(train.optimizer.beta2));
  line("adam_eps", fmt_double(train.optimizer.eps));
  line("weight_decay", fmt_double(train.optimizer.weight_decay));
  line("checkpoint_every", std::to_string(train.checkpoint_every));
  line("micro_batch", std::to_string(train.micro_batch));
  line("log_wall_time", train.log_wall_time ? "true" : "false");
  line("extractor_seed", std::to_string(extractor_seed));
  if (!extractor_path.empty()) line("extractor_path", extractor_path.string());
  return s;
}

FrozenExtractor RunConfig::make_extractor() const {
  return extractor_path.empty() ? FrozenExtractor::seeded(extractor_seed) : FrozenExtractor::load(extractor_path);
}

Stat mean_std(const std::vector<double>& values) {
  Stat s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

// ---------------------------------------------------------------------------
// shared plumbing

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Manifest {
 public:
  Manifest(const GlobalOptions& g, std::string command) : started_(utc_now()) {
    j_["command"] = std::move(command);
    j_["tool_version"] = kToolVersion;
    j_["seed"] = g.seed;
    j_["threads"] = g.threads;
    j_["bit_deterministic"] = g.threads == 1;
    j_["argv"] = g.argv;
    j_["config"] = ordered_json::object();
    j_["inputs"] = ordered_json::object();
    j_["outputs"] = ordered_json::object();
  }
  ordered_json& config() { return j_["config"]; }
  void config_text(const std::string& text) { j_["config_text"] = text; }
  void input(const std::string& k, const fs::path& p) { j_["inputs"][k] = p.string(); }
  void output(const std::string& k, const fs::path& p) { j_["outputs"][k] = p.string(); }
  void write(const fs::path& path) {
    j_["started"] = started_;
    j_["finished"] = utc_now();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write manifest " + path.string());
    f << j_.dump(2) << "\n";
  }

 private:
  ordered_json j_;
  std::string started_;
};

void config_to_json(const RunConfig& rc, ordered_json& j) {
  const KeyValueConfig kv = KeyValueConfig::parse(rc.to_text());
  for (const auto& [k, e] : kv.entries()) j[k] = e.value;
}

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig rc = g.config.empty() ? RunConfig{} : RunConfig::from_file(KeyValueConfig::load(g.config));
  if (g.seed_given) rc.model.seed = rc.train.seed = g.seed;
  return rc;
}

// Training churns through multi-megabyte activations every step; handing them
// back to the kernel and faulting them in again costs close to a tenth of the run.
void keep_heap_resident() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)once;
#endif
}

void apply_threads(const GlobalOptions& g, std::ostream& err) {
  if (g.threads < 1) throw std::invalid_argument("--threads must be at least 1");
  set_num_threads(g.threads);
  if (g.threads > 1) err << "note: --threads " << g.threads << " runs are not bit-deterministic\n";
}

/// Maps an in-flight exception onto the exit-code contract.
int report_error(std::ostream& err, const char* command) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << command << ": config error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DatasetError& e) {
    err << command << ": dataset error: " << e.what() << "\n";
    return e.kind() == DatasetErrorKind::io ? kExitIo : kExitFailure;
  } catch (const CheckpointError& e) {
    err << command << ": checkpoint error: " << e.what() << "\n";
    return e.kind() == CheckpointErrorKind::shape_mismatch ? kExitFailure : kExitIo;
  } catch (const ImageError& e) {
    err << command << ": image error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << command << ": " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << command << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const TrainingError& e) {
    err << command << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const NonFiniteError& e) {
    err << command << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << command << ": " << e.what() << "\n";
    return kExitIo;
  }
}

std::string index_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d.pgm", i);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const GlobalOptions& g, const SynthOptions& o, std::ostream& out, std::ostream& err) {
  try {
    if (o.out_dir.empty()) throw std::invalid_argument("--out is required");
    if (o.count <= 0) throw std::invalid_argument("--count must be positive");
    if (o.first_index < 0) throw std::invalid_argument("--first-index must be non-negative");
    apply_threads(g, err);
    low_dose_sigma(0.5, o.dose);  // validates the dose before anything is written
    if (o.size < 64) throw std::invalid_argument("--size must be at least 64");

    Manifest man(g, "synth");
    man.config()["count"] = o.count;
    man.config()["size"] = o.size;
    man.config()["dose"] = o.dose;
    man.config()["first_index"] = o.first_index;

    fs::create_directories(o.out_dir / "low");
    fs::create_directories(o.out_dir / "high");
    for (int i = o.first_index; i < o.first_index + o.count; ++i) {
      const std::uint64_t k = static_cast<std::uint64_t>(i);
      const Tensor clean = generate_phantom(derive_seed(g.seed, 0x7068616eULL, k), o.size, o.size);
      const Tensor low = simulate_low_dose(clean, o.dose, derive_seed(g.seed, 0x6e6f6973ULL, k));
      write_pgm(o.out_dir / "high" / index_name(i), clean);
      write_pgm(o.out_dir / "low" / index_name(i), low);
    }
    man.output("dataset", o.out_dir);
    man.write(o.out_dir / "manifest.json");
    out << "wrote " << o.count << " pairs (" << o.size << "x" << o.size << ", dose " << o.dose << ") to " << o.out_dir.string()
        << "\n";
    return kExitOk;
  } catch (...) {
    return report_error(err, "synth");
  }
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const GlobalOptions& g, const TrainOptions& o, std::ostream& out, std::ostream& err) {
  try {
    if (o.out_dir.empty()) throw std::invalid_argument("--out is required");
    apply_threads(g, err);
    keep_heap_resident();
    RunConfig rc = resolve_config(g);
    if (o.loss) rc.train.loss.mode = parse_loss_mode(*o.loss);
    if (o.epochs) rc.train.epochs = *o.epochs;
    rc.model.validate();
    rc.train.validate();

    // Everything that can fail on inputs happens before the output directory exists.
    const PairedDataset train_ds = PairedDataset::open(o.data_dir, Split::train);
    const std::vector<ImagePair> train_set = train_ds.load();
    std::vector<ImagePair> test_set;
    if (!o.test_dir.empty()) test_set = PairedDataset::open(o.test_dir, Split::test).load();
    if (static_cast<int>(train_set.size()) < rc.train.images_per_batch) {
      throw DatasetError(DatasetErrorKind::validation, "training set has " + std::to_string(train_set.size()) +
                                                           " images, fewer than images_per_batch = " +
                                                           std::to_string(rc.train.images_per_batch));
    }
    const FrozenExtractor extractor = rc.make_extractor();

    Manifest man(g, "train");
    config_to_json(rc, man.config());
    man.config_text(rc.to_text());
    man.input("data_dir", o.data_dir);
    if (!o.test_dir.empty()) man.input("test_dir", o.test_dir);
    if (!rc.extractor_path.empty()) man.input("extractor", rc.extractor_path);

    fs::create_directories(o.out_dir);
    if (rc.train.checkpoint_every > 0) rc.train.checkpoint_dir = o.out_dir;

    out << "training " << rc.model.variant_name() << " (" << num_params(rc.model) << " parameters) on " << train_set.size()
        << " images, loss " << to_string(rc.train.loss.mode) << "\n";
    TrainHooks hooks;
    hooks.on_epoch_end = [&](int epoch, const Model&, const EpochRecord& r) {
      out << "epoch " << epoch << "/" << rc.train.epochs << "  loss " << fmt6(r.mean_train_loss);
      if (!test_set.empty()) out << "  test psnr " << fmt6(r.mean_test_psnr) << "  ssim " << fmt6(r.mean_test_ssim);
      out << "\n" << std::flush;
    };
    const TrainResult res =
        train(init_model(rc.model), train_set, test_set.empty() ? nullptr : &test_set, extractor, rc.train, hooks);

    const fs::path ckpt = o.out_dir / "model.edc";
    const fs::path log = o.out_dir / "train_log.csv";
    const fs::path cfg = o.out_dir / "config.txt";
    save_checkpoint(res.model, ckpt);
    res.log.write_csv(log, rc.train.log_wall_time);
    {
      std::ofstream f(cfg, std::ios::binary | std::ios::trunc);
      f << rc.to_text();
    }
    man.output("checkpoint", ckpt);
    man.output("log", log);
    man.output("config", cfg);
    man.config()["optimizer_steps"] = std::to_string(res.optimizer_steps);
    man.write(o.out_dir / "manifest.json");
    out << "wrote " << ckpt.string() << "\n";
    return kExitOk;
  } catch (...) {
    return report_error(err, "train");
  }
}

// ---------------------------------------------------------------------------
// denoise

namespace {

Model load_for_inference(const GlobalOptions& g, const fs::path& checkpoint) {
  std::optional<ModelConfig> expected;
  if (!g.config.empty()) expected = resolve_config(g).model;
  return load_checkpoint(checkpoint, expected);
}

void denoise_file(const Model& m, const fs::path& in, const fs::path& out) {
  const Tensor x = read_pgm(in);
  if (x.h() < 3 || x.w() < 3) {
    throw std::invalid_argument(in.string() + ": image is " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                                ", denoising needs at least 3x3");
  }
  write_pgm(out, denoise(m, x));
}

}  // namespace

int cmd_denoise(const GlobalOptions& g, const DenoiseOptions& o, std::ostream& out, std::ostream& err) {
  try {
    apply_threads(g, err);
    const Model m = load_for_inference(g, o.checkpoint);
    Manifest man(g, "denoise");
    man.config()["variant"] = m.config.variant_name();
    man.input("checkpoint", o.checkpoint);
    man.input("input", o.input);
    man.output("output", o.output);

    if (fs::is_directory(o.input)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(o.input)) {
        if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) throw DatasetError(DatasetErrorKind::validation, "no .pgm files in " + o.input.string());
      fs::create_directories(o.output);
      for (const fs::path& f : files) denoise_file(m, f, o.output / f.filename());
      man.write(o.output / "manifest.json");
      out << "denoised " << files.size() << " images into " << o.output.string() << "\n";
    } else {
      if (!fs::exists(o.input)) throw ImageError("cannot open " + o.input.string());
      if (o.output.has_parent_path()) fs::create_directories(o.output.parent_path());
      denoise_file(m, o.input, o.output);
      fs::path mpath = o.output;
      mpath += ".manifest.json";
      man.write(mpath);
      out << "wrote " << o.output.string() << "\n";
    }
    return kExitOk;
  } catch (...) {
    return report_error(err, "denoise");
  }
}

// ---------------------------------------------------------------------------
// eval

namespace {

struct ImageMetrics {
  double psnr = 0.0, ssim = 0.0, rmse = 0.0, feature_distance = 0.0;
};

ImageMetrics measure(const FrozenExtractor& ext, const Tensor& x, const Tensor& ref) {
  return ImageMetrics{psnr(x, ref), ssim(x, ref), rmse(x, ref), feature_distance(ext, x, ref)};
}

}  // namespace

int cmd_eval(const GlobalOptions& g, const EvalOptions& o, std::ostream& out, std::ostream& err) {
  try {
    apply_threads(g, err);
    const RunConfig rc = resolve_config(g);
    const Model m = load_for_inference(g, o.checkpoint);
    const FrozenExtractor ext = rc.make_extractor();
    const PairedDataset ds = PairedDataset::open(o.data_dir, Split::test);
    const std::vector<ImagePair> set = ds.load();

    std::vector<ImageMetrics> ldct(set.size()), model(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
      ldct[i] = measure(ext, set[i].low, set[i].high);
      model[i] = measure(ext, denoise(m, set[i].low), set[i].high);
    }

    const fs::path dir = o.out_dir.empty() ? fs::path(".") : o.out_dir;
    fs::create_directories(dir);
    const fs::path per_image = dir / "eval_per_image.csv";
    const fs::path summary = dir / "eval_summary.csv";
    {
      std::ofstream f(per_image, std::ios::binary | std::ios::trunc);
      if (!f) throw std::runtime_error("cannot write " + per_image.string());
      f << "image,ldct_psnr,ldct_ssim,ldct_rmse,ldct_feature_distance,model_psnr,model_ssim,model_rmse,model_feature_distance\n";
      for (std::size_t i = 0; i < set.size(); ++i) {
        f << set[i].name;
        for (const ImageMetrics* r : {&ldct[i], &model[i]}) {
          f << "," << fmt6(r->psnr) << "," << fmt6(r->ssim) << "," << fmt6(r->rmse) << "," << fmt6(r->feature_distance);
        }
        f << "\n";
      }
    }

    struct Row {
      std::string label;
      Stat psnr, ssim, rmse, fd;
    };
    auto summarize = [](const std::string& label, const std::vector<ImageMetrics>& v) {
      std::vector<double> p, s, r, d;
      for (const ImageMetrics& x : v) {
        p.push_back(x.psnr);
        s.push_back(x.ssim);
        r.push_back(x.rmse);
        d.push_back(x.feature_distance);
      }
      return Row{label, mean_std(p), mean_std(s), mean_std(r), mean_std(d)};
    };
    const std::vector<Row> rows = {summarize("LDCT", ldct), summarize(m.config.variant_name(), model)};
    {
      std::ofstream f(summary, std::ios::binary | std::ios::trunc);
      if (!f) throw std::runtime_error("cannot write " + summary.string());
      f << "row,psnr_mean,psnr_std,ssim_mean,ssim_std,rmse_mean,rmse_std,feature_distance_mean,feature_distance_std\n";
      for (const Row& r : rows) {
        f << r.label;
        for (const Stat* s : {&r.psnr, &r.ssim, &r.rmse, &r.fd}) f << "," << fmt6(s->mean) << "," << fmt6(s->std);
        f << "\n";
      }
    }

    char line[256];
    std::snprintf(line, sizeof line, "%-8s  %-22s  %-20s  %-20s  %-22s\n", "", "PSNR", "SSIM", "RMSE", "feature dist.");
    out << set.size() << " images from " << o.data_dir.string() << "\n" << line;
    for (const Row& r : rows) {
      std::snprintf(line, sizeof line, "%-8s  %9.4f +- %-9.4f  %.4f +- %-9.4f  %.5f +- %-9.5f  %.6f +- %-9.6f\n", r.label.c_str(),
                    r.psnr.mean, r.psnr.std, r.ssim.mean, r.ssim.std, r.rmse.mean, r.rmse.std, r.fd.mean, r.fd.std);
      out << line;
    }

    Manifest man(g, "eval");
    config_to_json(rc, man.config());
    man.input("checkpoint", o.checkpoint);
    man.input("data_dir", o.data_dir);
    man.output("per_image", per_image);
    man.output("summary", summary);
    man.write(dir / "eval_manifest.json");
    return kExitOk;
  } catch (...) {
    return report_error(err, "eval");
  }
}

// ---------------------------------------------------------------------------
// gradcheck

namespace {

struct LossCase {
  std::string label;
  LossConfig loss;
};

std::vector<LossCase> gradcheck_cases() {
  std::vector<LossCase> cases;
  LossConfig mse;
  mse.mode = LossMode::mse_only;
  cases.push_back({"mse_only", mse});
  for (const std::vector<int>& st : std::vector<std::vector<int>>{{4}, {3, 4}, {2, 3, 4}, {1, 2, 3, 4}}) {
    LossConfig p;
    p.mode = LossMode::perceptual_only;
    p.stages_used = st;
    cases.push_back({"perceptual_only " + stage_label(st), p});
  }
  cases.push_back({"compound", LossConfig{}});
  return cases;
}

}  // namespace

int cmd_gradcheck(const GlobalOptions& g, const GradcheckOptions& o, std::ostream& out, std::ostream& err) {
  try {
    apply_threads(g, err);
    const RunConfig rc = resolve_config(g);
    if (o.size < FrozenExtractor::kMinExtent) throw std::invalid_argument("gradcheck input must be at least 16x16");
    if (!(o.eps > 0.0)) throw std::invalid_argument("--eps must be positive");

    BasicModel<double> model = init_model(rc.model).cast<double>();
    if (!o.at_init) {
      // Kernels scaled to variance 2 / fan_in keep the backward signal at a measurable
      // size through all sixteen convolutions; small random biases put every ReLU
      // in general position.
      Rng rng(derive_seed(rc.model.seed, 0x67636b62ULL));
      for (BlockParams<double>& b : model.blocks) {
        for (ConvParams<double>* c : {&b.fuse, &b.feature}) {
          for (double& v : c->kernel.data()) v *= std::sqrt(6.0);
          for (double& v : c->bias) v = rng.uniform(-0.05, 0.05);
        }
      }
    }
    const BasicExtractor<double> ext = rc.make_extractor().cast<double>();
    const Shape shape{1, 1, o.size, o.size};
    TensorD x(shape), target(shape);
    {
      Rng rng(derive_seed(rc.model.seed, 0x67636b78ULL));
      for (double& v : x.data()) v = rng.uniform();
      for (double& v : target.data()) v = rng.uniform();
    }

    std::vector<std::span<double>> spans;
    std::vector<std::string> names;
    for (ParamView<double>& p : model.parameters()) {
      names.push_back(p.name);
      spans.push_back(p.values);
    }

    std::ostringstream report;
    report << "gradcheck " << rc.model.variant_name() << " on a " << o.size << "x" << o.size << " input, eps " << o.eps
        << (o.exhaustive ? ", every element" : ", sampled kernels") << (o.at_init ? ", at initialization" : "") << "\n";
    double worst = 0.0;
    bool ok = true;
    for (const LossCase& lc : gradcheck_cases()) {
      DiffProblem<double> problem;
      problem.names = names;
      problem.params = spans;
      problem.loss = [&] { return compound_loss(lc.loss, ext, forward(model, x).output, target).value; };
      problem.gradient = [&] {
        ForwardResult<double> fr = forward(model, x);
        const LossResult<double> l = compound_loss(lc.loss, ext, fr.output, target);
        Grads<double> gr = backward(model, fr.cache, l.grad);
        if (o.tamper) o.tamper(gr);
        std::vector<std::vector<double>> flat;
        for (const ParamView<double>& p : gr.parameters()) flat.emplace_back(p.values.begin(), p.values.end());
        return flat;
      };
      ProbeSelection sel;
      sel.max_per_param = o.exhaustive ? 0 : o.kernel_samples;
      sel.seed = derive_seed(rc.model.seed, 0x70726f62ULL);
      const FiniteDiffReport rep = finite_diff_check(problem, o.eps, sel);

      report << "[" << lc.label << "]\n";
      for (const ParamDiffResult& r : rep.params) {
        const bool pass = r.max_relative_error < o.tolerance;
        ok = ok && pass;
        char line[200];
        std::snprintf(line, sizeof line, "  %-22s checked %5zu  max rel err %.3e  (analytic %+.6e, numeric %+.6e)  %s\n",
                      r.name.c_str(), r.checked, r.max_relative_error, r.analytic_at_worst, r.numeric_at_worst, pass ? "ok" : "FAIL");
        report << line;
      }
      worst = std::max(worst, rep.max_relative_error);
    }
    char line[120];
    std::snprintf(line, sizeof line, "max relative error %.3e (tolerance %.1e): %s\n", worst, o.tolerance, ok ? "PASS" : "FAIL");
    report << line;
    out << report.str();

    if (!o.out_dir.empty()) {
      fs::create_directories(o.out_dir);
      const fs::path rpath = o.out_dir / "gradcheck_report.txt";
      {
        std::ofstream f(rpath, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + rpath.string());
        f << report.str();
      }
      Manifest man(g, "gradcheck");
      config_to_json(rc, man.config());
      man.output("report", rpath);
      man.write(o.out_dir / "manifest.json");
    }
    return ok ? kExitOk : kExitFailure;
  } catch (...) {
    return report_error(err, "gradcheck");
  }
}

// ---------------------------------------------------------------------------
// argument parsing

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"edge-enhanced dense CNN denoiser for low-dose CT"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);
  app.add_option("--seed", g.seed, "random seed (u64)");
  app.add_option("--threads", g.threads, "worker threads; more than 1 is not bit-deterministic")->capture_default_str();
  app.add_option("--config", g.config, "key = value configuration file");

  SynthOptions so;
  CLI::App* synth = app.add_subcommand("synth", "generate paired phantom images");
  synth->add_option("--out", so.out_dir, "output directory")->required();
  synth->add_option("--count", so.count, "number of pairs")->capture_default_str();
  synth->add_option("--size", so.size, "image side length")->capture_default_str();
  synth->add_option("--dose", so.dose, "dose factor in (0, 1]")->capture_default_str();
  synth->add_option("--first-index", so.first_index, "index of the first phantom (splits by seed range)")->capture_default_str();

  TrainOptions to;
  CLI::App* trn = app.add_subcommand("train", "train a model");
  trn->add_option("data_dir", to.data_dir, "training set (low/ and high/)")->required();
  trn->add_option("--test-dir", to.test_dir, "test set evaluated after every epoch");
  trn->add_option("--out", to.out_dir, "output directory")->required();
  trn->add_option("--loss", to.loss, "mse_only | perceptual_only | compound");
  trn->add_option("--epochs", to.epochs, "override the configured epoch count");

  DenoiseOptions dno;
  CLI::App* den = app.add_subcommand("denoise", "denoise an image or a directory of images");
  den->add_option("checkpoint", dno.checkpoint)->required();
  den->add_option("input", dno.input)->required();
  den->add_option("output", dno.output)->required();

  EvalOptions eo;
  CLI::App* ev = app.add_subcommand("eval", "PSNR/SSIM/RMSE/feature distance on a paired set");
  ev->add_option("checkpoint", eo.checkpoint)->required();
  ev->add_option("data_dir", eo.data_dir)->required();
  ev->add_option("--out", eo.out_dir, "directory for the CSV reports");

  GradcheckOptions go;
  CLI::App* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gc->add_option("--size", go.size, "input side length")->capture_default_str();
  gc->add_option("--eps", go.eps, "finite-difference step")->capture_default_str();
  gc->add_option("--samples", go.kernel_samples, "kernel elements probed per tensor")->capture_default_str();
  gc->add_flag("--exhaustive", go.exhaustive, "probe every element");
  gc->add_flag("--at-init", go.at_init, "probe at the unscaled initialization");
  gc->add_option("--out", go.out_dir, "directory for the report and manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitFailure;
  }
  g.seed_given = app.count("--seed") > 0;

  if (*synth) return cmd_synth(g, so, out, err);
  if (*trn) return cmd_train(g, to, out, err);
  if (*den) return cmd_denoise(g, dno, out, err);
  if (*ev) return cmd_eval(g, eo, out, err);
  return cmd_gradcheck(g, go, out, err);
}

}  // namespace edcnn::cli
