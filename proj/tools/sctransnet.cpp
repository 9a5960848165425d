#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sctrans/checkpoint.hpp"
#include "sctrans/config.hpp"
#include "sctrans/errors.hpp"
#include "sctrans/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sct;

namespace {

// Options shared by every subcommand. Flags override the config file.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::string out;
  std::optional<Index> workers;
  std::vector<std::string> overrides;  // key=value
};

struct Loaded {
  RunConfig run;
  bool from_file = false;
};

Loaded load_config(const Common& c) {
  Loaded l;
  if (!c.config_path.empty()) {
    l.run = load_run_config(c.config_path);
    l.from_file = true;
  }
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_run_option(l.run, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) l.run.model.seed = *c.seed;
  if (c.threshold) l.run.model.threshold = *c.threshold;
  if (!c.out.empty()) l.run.out_dir = c.out;
  if (c.workers) l.run.workers = *c.workers;
  l.run.validate();
  return l;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

/// The model to evaluate: from an explicit config (weights must match it) or entirely
/// from the checkpoint.
SCTransNet<float> load_model(const Loaded& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("checkpoint: no checkpoint given (--checkpoint or 'checkpoint' key)");
  if (cfg.from_file) {
    SCTransNet<float> model(cfg.run.model);
    load_parameters(model, checkpoint);
    return model;
  }
  return load_checkpoint<float>(checkpoint);
}

// ---------------------------------------------------------------- commands

int cmd_train(const Common& common) {
  Loaded cfg = load_config(common);
  const RunConfig& run = cfg.run;
  if (run.data_root.empty()) throw ConfigError("data_root: no dataset given");
  // Everything is read before any output is created.
  const std::vector<Sample> train = load_dataset(run.data_root, run.resolve_split(run.train_split));
  if (train.empty()) throw DataError("training split " + run.resolve_split(run.train_split).string() + " is empty");
  std::vector<Sample> val;
  const fs::path test_split = run.resolve_split(run.test_split);
  if (run.val_every > 0) {
    if (fs::exists(test_split)) {
      val = load_dataset(run.data_root, test_split);
    } else {
      spdlog::warn("no validation split at {}; best.ckpt follows the last epoch", test_split.string());
    }
  }

  SCTransNet<float> model(run.model);
  if (!run.checkpoint.empty()) {
    load_parameters(model, run.checkpoint);
    spdlog::info("initialized from {}", run.checkpoint);
  }
  const fs::path out(run.out_dir);
  fs::create_directories(out);
  write_file(out / "run.cfg", to_text(run));
  std::ofstream log(out / "train.jsonl");

  TrainOptions opts;
  opts.log = &log;
  opts.out_dir = out;
  opts.validation = val.empty() ? nullptr : &val;
  opts.val_every = run.val_every;
  opts.checkpoint_every = run.checkpoint_every;
  opts.metrics = run.metric_options();
  opts.metrics.roc = false;
  opts.on_step = [](const StepRecord& r) {
    spdlog::debug("epoch {} step {} lr {:.3e} loss {:.6f}", r.epoch, r.step, r.lr, r.loss);
  };
  spdlog::info("training {} params on {} images for {} epochs", model.count_params(), train.size(), run.model.epochs);
  const TrainResult r = train_epochs(model, train, opts);
  spdlog::info("done: {} steps, final loss {:.6f}, best validation IoU {:.4f} (epoch {})", r.steps.size(),
               r.steps.empty() ? 0.0 : r.steps.back().loss, r.best_iou, r.best_epoch);
  return 0;
}

int cmd_eval(const Common& common, const std::string& checkpoint_flag, const std::string& pred_dir) {
  Loaded cfg = load_config(common);
  RunConfig& run = cfg.run;
  if (run.data_root.empty()) throw ConfigError("data_root: no dataset given");
  const std::vector<Sample> samples = load_dataset(run.data_root, run.resolve_split(run.test_split));

  EvalAccumulator acc;
  int failures = 0;
  if (!pred_dir.empty()) {
    acc = EvalAccumulator(run.metric_options());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const fs::path p = fs::path(pred_dir) / (samples[i].id + ".png");
      try {
        const Tensor<float> pred = to_unit(read_png(p));
        if (pred.shape() != samples[i].image.shape()) throw DataError(p.string() + ": size differs from the mask");
        acc.add(static_cast<Index>(i), pred, samples[i].mask);
      } catch (const Error& e) {
        spdlog::error("{}: {}", samples[i].id, e.what());
        ++failures;
      }
    }
  } else {
    const SCTransNet<float> model = load_model(cfg, checkpoint_flag.empty() ? run.checkpoint : checkpoint_flag);
    if (!cfg.from_file && !common.threshold) run.model.threshold = model.config().threshold;
    acc = evaluate_dataset(model, samples, run.metric_options(), run.workers);
  }

  const MetricReport report = acc.report();
  for (const std::string& w : report.warnings) spdlog::warn("{}", w);
  const fs::path out(run.out_dir);
  fs::create_directories(out);
  std::ostringstream record, roc;
  write_metric_record(record, report);
  write_roc(roc, report.roc);
  write_file(out / "metrics.txt", record.str());
  write_file(out / "roc.txt", roc.str());
  write_metric_table(std::cout, report);
  if (failures > 0) spdlog::error("{} of {} predictions could not be scored", failures, samples.size());
  return failures > 0 ? 1 : 0;
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const std::string& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".png") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  return files;
}

int cmd_infer(const Common& common, const std::string& checkpoint_flag, const std::vector<std::string>& inputs) {
  Loaded cfg = load_config(common);
  RunConfig& run = cfg.run;
  const SCTransNet<float> model = load_model(cfg, checkpoint_flag.empty() ? run.checkpoint : checkpoint_flag);
  const double threshold = common.threshold || cfg.from_file ? run.model.threshold : model.config().threshold;
  const fs::path out(run.out_dir);
  fs::create_directories(out);
  const std::vector<fs::path> files = expand_inputs(inputs);
  int failures = 0;
  for (const fs::path& f : files) {
    try {
      const Tensor<float> p = predict_image(model, to_unit(read_png(f)));
      const std::string stem = f.stem().string();
      write_png(out / (stem + "_saliency.png"), to_gray(p));
      write_png(out / (stem + "_mask.png"), to_gray(binarize(p, threshold)));
      spdlog::info("{} -> {}", f.string(), (out / (stem + "_saliency.png")).string());
    } catch (const Error& e) {
      spdlog::error("{}: {}", f.string(), e.what());
      ++failures;
    }
  }
  if (failures > 0) spdlog::error("{} of {} images failed", failures, files.size());
  return failures > 0 ? 1 : 0;
}

int cmd_analyze(const Common& common, Index height, Index width) {
  const Loaded cfg = load_config(common);
  const SCTransNet<float> model(cfg.run.model);
  if (height <= 0) height = cfg.run.model.image_size;
  if (width <= 0) width = height;
  const Index params = model.count_params();
  std::printf("params %lld (%.3f M)\n", static_cast<long long>(params), params / 1e6);
  for (const auto& [prefix, count] : model.param_breakdown()) {
    const std::string part = prefix.ends_with('.') ? prefix.substr(0, prefix.size() - 1) : prefix;
    std::printf("params.%s %lld\n", part.c_str(), static_cast<long long>(count));
  }
  const FlopBreakdown f = model.count_flops(height, width);
  std::printf("flops %lld (%.3f G at %lldx%lld)\n", static_cast<long long>(f.total()), f.total() / 1e9,
              static_cast<long long>(height), static_cast<long long>(width));
  std::printf("flops.encoder %lld\nflops.transformer %lld\nflops.decoder %lld\nflops.heads %lld\n",
              static_cast<long long>(f.encoder), static_cast<long long>(f.transformer),
              static_cast<long long>(f.decoder), static_cast<long long>(f.heads));
  return 0;
}

int cmd_synth(const Common& common, Index test_count) {
  const Loaded cfg = load_config(common);
  const RunConfig& run = cfg.run;
  SynthSpec spec = run.synth;
  spec.seed = common.seed ? *common.seed : spec.seed;
  spec.count += test_count;
  const std::vector<Sample> all = synth_generate(spec);
  const fs::path root = common.out.empty() ? fs::path(run.data_root) : fs::path(common.out);
  if (root.empty()) throw ConfigError("out: no output directory given");
  const auto split = [&](const std::string& s) { return fs::path(s).is_absolute() ? fs::path(s) : root / s; };
  const auto mid = all.end() - static_cast<std::ptrdiff_t>(test_count);
  save_dataset(root, {all.begin(), mid}, split(run.train_split));
  if (test_count > 0) save_dataset(root, {mid, all.end()}, split(run.test_split));
  spdlog::info("wrote {} training and {} test images to {}", all.size() - static_cast<std::size_t>(test_count),
               test_count, root.string());
  return 0;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Run configuration file (key = value lines)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Random seed (overrides the config)");
  app->add_option("--threshold", c.threshold, "Binarization threshold in [0, 1]");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--workers", c.workers, "Evaluation shards");
  app->add_option("--set", c.overrides, "Override any config key, e.g. --set epochs=5")->take_all();
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::cfg::load_env_levels();
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Infrared small target detection: train, evaluate, infer, analyze, synthesize"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, pred_dir;
  std::vector<std::string> inputs;
  Index height = 0, width = 0, test_count = 0;

  auto* train = app.add_subcommand("train", "Train a model; writes checkpoints and train.jsonl under --out");
  add_common(train, common);
  auto* eval = app.add_subcommand("eval", "Score a checkpoint (or --pred-dir PNGs) on the test split");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file");
  eval->add_option("--pred-dir", pred_dir, "Directory of <id>.png saliency maps to score instead of a model")
      ->check(CLI::ExistingDirectory);
  auto* infer = app.add_subcommand("infer", "Write saliency and mask PNGs for images");
  add_common(infer, common);
  infer->add_option("--checkpoint", checkpoint, "Checkpoint file");
  infer->add_option("inputs", inputs, "PNG files or directories")->required();
  auto* analyze = app.add_subcommand("analyze", "Report parameter and FLOP counts");
  add_common(analyze, common);
  analyze->add_option("--height", height, "Input height (default: image_size)");
  analyze->add_option("--width", width, "Input width (default: height)");
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset under --out");
  add_common(synth, common);
  synth->add_option("--test-count", test_count, "Extra images written to the test split")->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint, pred_dir);
    if (*infer) return cmd_infer(common, checkpoint, inputs);
    if (*analyze) return cmd_analyze(common, height, width);
    if (*synth) return cmd_synth(common, test_count);
  } catch (const ConfigError& e) {
    spdlog::error("invalid configuration: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
