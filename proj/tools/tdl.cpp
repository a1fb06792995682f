// Command-line front end: training, evaluation, self-verification, parameter
// counting, synthetic-dataset generation, and single-image prediction.
//
// Exit codes: 0 success, 1 verification failure (or unexpected error),
// 2 config error, 3 dataset error, 4 shape/class-count mismatch,
// 5 corrupt or unreadable checkpoint.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "tdl/serialize.hpp"
#include "tdl/train.hpp"
#include "tdl/verify.hpp"

namespace fs = std::filesystem;
using namespace tdl;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> precision;
  std::optional<std::string> dataset;
};

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError(strcat_msg("precision must be f32 or f64, got '", s, "'"));
}

// Loads the run config and applies command-line overrides. The seed override
// re-seeds the model too (model seed always tracks the run seed).
RunConfig load_run_config(const CommonFlags& flags) {
  RunConfig run = parse_run_config_file(flags.config_path);
  if (flags.seed) {
    run.seed = *flags.seed;
    run.model.seed = *flags.seed;
  }
  if (flags.out) run.out_dir = *flags.out;
  if (flags.precision) run.precision = parse_precision(*flags.precision);
  if (flags.dataset) run.dataset_root = *flags.dataset;
  return run;
}

std::string metrics_file_path(const RunConfig& run) {
  fs::path p(run.metrics_path);
  if (p.is_absolute()) return p.string();
  return (fs::path(run.out_dir) / p).string();
}

template <typename T>
int do_train(const RunConfig& run) {
  std::vector<Sample> data = load_dataset(run.dataset_root);
  const int64_t k = dataset_num_classes(data);
  if (k > run.model.num_classes)
    throw ShapeError(strcat_msg("dataset has labels up to ", k - 1,
                                " but the model is configured for ",
                                run.model.num_classes, " classes"));
  Trainer<T> trainer(run, std::move(data));
  std::ostringstream log;
  struct Tee : std::streambuf {
    std::streambuf *a, *b;
    int overflow(int c) override {
      if (c != EOF) {
        a->sputc(static_cast<char>(c));
        b->sputc(static_cast<char>(c));
      }
      return c;
    }
  } tee;
  tee.a = log.rdbuf();
  tee.b = std::cout.rdbuf();
  std::ostream both(&tee);
  trainer.run(both);
  atomic_write_file((fs::path(run.out_dir) / "loss_log.csv").string(), log.str());
  return 0;
}

int cmd_train(const CommonFlags& flags, std::optional<int64_t> steps) {
  RunConfig run = load_run_config(flags);
  if (steps) {
    run.steps = *steps;
    run.epochs = 0;
  }
  if (run.precision == Precision::f64) return do_train<double>(run);
  return do_train<float>(run);
}

template <typename T>
int do_eval(const std::string& ckpt_path, const CommonFlags& flags, bool hd95) {
  LoadedCheckpoint<T> ckpt = load_checkpoint<T>(ckpt_path);
  RunConfig run = ckpt.run;
  if (flags.out) run.out_dir = *flags.out;
  const std::string root = flags.dataset ? *flags.dataset : run.dataset_root;
  std::vector<Sample> data = load_dataset(root);
  const int64_t k = dataset_num_classes(data);
  if (k > run.model.num_classes)
    throw ShapeError(strcat_msg("dataset has labels up to ", k - 1,
                                " but the checkpoint model has ",
                                run.model.num_classes, " classes"));
  MetricsReport report = evaluate_model(ckpt.model, data, hd95);
  const std::string csv = report.to_csv();
  std::cout << csv;
  fs::create_directories(run.out_dir);
  atomic_write_file(metrics_file_path(run), csv);
  std::printf("mean_dice: %.6f\n", report.mean_dice);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const CommonFlags& flags, bool hd95) {
  // Precision comes from the checkpoint's embedded config unless overridden.
  Precision p = load_checkpoint_raw(ckpt_path).config_text.find("precision = f64") !=
                        std::string::npos
                    ? Precision::f64
                    : Precision::f32;
  if (flags.precision) p = parse_precision(*flags.precision);
  if (p == Precision::f64) return do_eval<double>(ckpt_path, flags, hd95);
  return do_eval<float>(ckpt_path, flags, hd95);
}

int cmd_verify(const std::string& suite, bool inject_fault) {
  if (inject_fault) debug::corrupt_matmul_backward = true;
  const auto results = run_verify_suites(suite);
  for (const auto& r : results)
    std::printf("%s %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.c_str());
  debug::corrupt_matmul_backward = false;
  return all_suites_passed(results) ? 0 : 1;
}

int cmd_count_params(const CommonFlags& flags) {
  RunConfig run = load_run_config(flags);
  Model<float> model = Model<float>::build(run.model);
  std::printf("total: %lld\n", static_cast<long long>(model.count_params()));
  for (const auto& [name, count] : model.breakdown())
    std::printf("  %s: %lld\n", name.c_str(), static_cast<long long>(count));
  return 0;
}

int cmd_synth(int64_t n, int64_t img, int64_t k, uint64_t seed,
              const std::string& out) {
  std::vector<Sample> samples = synth_dataset(n, img, img, k, seed);
  save_dataset(out, samples);
  std::printf("wrote %lld samples (%lldx%lld, %lld classes) to %s\n",
              static_cast<long long>(n), static_cast<long long>(img),
              static_cast<long long>(img), static_cast<long long>(k), out.c_str());
  return 0;
}

template <typename T>
int do_predict(const std::string& ckpt_path, const std::string& image_path,
               const std::string& out_path) {
  LoadedCheckpoint<T> ckpt = load_checkpoint<T>(ckpt_path);
  Tdl1Data img = load_tdl1_file(image_path);
  if (img.shape.size() != 3 || img.shape[0] != ckpt.run.model.in_channels)
    throw ShapeError(strcat_msg("predict: image must be [",
                                ckpt.run.model.in_channels, ",H,W], got ",
                                shape_str(img.shape)));
  const int64_t h = img.shape[1], w = img.shape[2];
  if (h != ckpt.run.model.img_size || w != ckpt.run.model.img_size)
    throw ShapeError(strcat_msg("predict: image is ", h, "x", w,
                                " but the model expects ", ckpt.run.model.img_size,
                                "x", ckpt.run.model.img_size));
  std::vector<T> data(img.data.size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(img.data[i]);
  Tensor<T> x(Shape{1, img.shape[0], h, w}, std::move(data));
  const std::vector<int64_t> labels = argmax_labels(ckpt.model.forward(x));
  std::vector<float> out(labels.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(labels[i]);
  save_tdl1_file(out_path, {h, w}, out.data());
  std::printf("wrote %lldx%lld label map to %s\n", static_cast<long long>(h),
              static_cast<long long>(w), out_path.c_str());
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& image,
                const std::string& out, const CommonFlags& flags) {
  Precision p = flags.precision ? parse_precision(*flags.precision) : Precision::f32;
  if (p == Precision::f64) return do_predict<double>(ckpt, image, out);
  return do_predict<float>(ckpt, image, out);
}

template <typename F>
int run_guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return 3;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "mismatch error: %s\n", e.what());
    return 4;
  } catch (const IoError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Swin-pyramid segmentation toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::optional<int64_t> steps_override;
  std::string suite, ckpt_path, image_path, predict_out;
  bool inject_fault = false, hd95 = false;
  int64_t synth_n = 8, synth_img = 32, synth_k = 2;
  uint64_t synth_seed = 0;
  std::string synth_out;

  auto add_common = [&](CLI::App* sub, bool need_config) {
    if (need_config)
      sub->add_option("--config", flags.config_path, "run config file")->required();
    sub->add_option("--seed", [&](const CLI::results_t& r) {
      flags.seed = std::stoull(r[0]);
      return true;
    }, "override the run seed");
    sub->add_option("--out", [&](const CLI::results_t& r) {
      flags.out = r[0];
      return true;
    }, "override the output directory");
    sub->add_option("--precision", [&](const CLI::results_t& r) {
      flags.precision = r[0];
      return true;
    }, "f32 or f64");
    sub->add_option("--dataset", [&](const CLI::results_t& r) {
      flags.dataset = r[0];
      return true;
    }, "override the dataset root");
  };

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, true);
  train->add_option("--steps", [&](const CLI::results_t& r) {
    steps_override = std::stoll(r[0]);
    return true;
  }, "override the step count");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_flag("--hd95", hd95, "report 95th-percentile Hausdorff");
  add_common(eval, false);

  CLI::App* verify = app.add_subcommand("verify", "run self-check suites");
  verify->add_option("--suite", suite, "run one suite only");
  verify->add_flag("--inject-fault", inject_fault)->group("");

  CLI::App* count = app.add_subcommand("count-params", "print parameter counts");
  add_common(count, true);

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--n", synth_n, "number of samples");
  synth->add_option("--img", synth_img, "square image side");
  synth->add_option("--classes", synth_k, "number of classes (incl. background)");
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  CLI::App* predict = app.add_subcommand("predict", "predict one image");
  predict->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  predict->add_option("--image", image_path, "input TDL1 image")->required();
  predict->add_option("--out", predict_out, "output TDL1 label map")->required();
  predict->add_option("--precision", [&](const CLI::results_t& r) {
    flags.precision = r[0];
    return true;
  }, "f32 or f64");

  CLI11_PARSE(app, argc, argv);

  return run_guarded([&]() -> int {
    if (train->parsed()) return cmd_train(flags, steps_override);
    if (eval->parsed()) return cmd_eval(ckpt_path, flags, hd95);
    if (verify->parsed()) return cmd_verify(suite, inject_fault);
    if (count->parsed()) return cmd_count_params(flags);
    if (synth->parsed())
      return cmd_synth(synth_n, synth_img, synth_k, synth_seed, synth_out);
    if (predict->parsed())
      return cmd_predict(ckpt_path, image_path, predict_out, flags);
    return 2;
  });
}
