#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "sctrans/checkpoint.hpp"
#include "sctrans/errors.hpp"
#include "sctrans/pipeline.hpp"
#include "test_util.hpp"

namespace sct {
namespace {

namespace fs = std::filesystem;

std::vector<Sample> toy_samples(Index count, Index h, Index w, std::uint64_t seed) {
  SynthSpec spec;
  spec.count = count;
  spec.height = h;
  spec.width = w;
  spec.seed = seed;
  return synth_generate(spec);
}

ModelConfig toy_training_config() {
  ModelConfig cfg = testing::toy_config();
  cfg.num_sctb = 1;
  cfg.batch_size = 2;
  cfg.epochs = 3;
  cfg.seed = 4;
  return cfg;
}

TEST(Pipeline, PredictImageKeepsOriginalExtents) {
  const SCTransNet<float> model(testing::toy_config());
  const auto s = toy_samples(1, 37, 50, 1);
  const Tensor<float> y = predict_image(model, s[0].image);
  EXPECT_EQ(y.shape(), (Shape{37, 50}));
  // Same as running the padded input by hand and cropping.
  const EvalInput in = prepare_eval(s[0].image, model.config().spatial_multiple());
  EXPECT_EQ(testing::max_abs_diff(crop_back(model.predict(in.image), in), y), 0.0);
}

TEST(Pipeline, ShardedEvaluationIsIndependentOfWorkerCount) {
  const SCTransNet<float> model(testing::toy_config());
  const auto samples = toy_samples(7, 32, 48, 2);
  const MetricOptions opts;
  std::ostringstream base;
  const auto one = evaluate_dataset(model, samples, opts, 1).report();
  write_metric_record(base, one);
  for (Index workers : {2, 3, 7, 16}) {
    const auto r = evaluate_dataset(model, samples, opts, workers).report();
    std::ostringstream s;
    write_metric_record(s, r);
    EXPECT_EQ(s.str(), base.str()) << workers;
    EXPECT_EQ(r.roc, one.roc);
  }
  EXPECT_THROW(evaluate_dataset(model, samples, opts, 0), ConfigError);
}

TEST(Pipeline, ShortTrainingLogsStepsAndWritesCheckpoints) {
  const fs::path out = fs::temp_directory_path() / "sct_pipeline_train";
  fs::remove_all(out);
  SCTransNet<float> model(toy_training_config());
  const auto train = toy_samples(4, 32, 32, 3);
  const auto val = toy_samples(2, 32, 32, 5);
  std::ostringstream log;
  TrainOptions opts;
  opts.log = &log;
  opts.out_dir = out;
  opts.validation = &val;
  opts.checkpoint_every = 2;
  Index callbacks = 0;
  opts.on_step = [&](const StepRecord&) { ++callbacks; };
  const TrainResult r = train_epochs(model, train, opts);
  ASSERT_EQ(r.steps.size(), 6U);
  EXPECT_EQ(callbacks, 6);
  EXPECT_EQ(r.steps[0].lr, 1e-3);
  EXPECT_EQ(r.steps[2].epoch, 1);
  EXPECT_LT(r.steps[5].lr, r.steps[0].lr);
  EXPECT_EQ(r.steps[0].side.size(), 5U);
  EXPECT_GE(r.best_iou, 0.0);
  EXPECT_TRUE(fs::exists(out / "final.ckpt"));
  EXPECT_TRUE(fs::exists(out / "best.ckpt"));
  EXPECT_TRUE(fs::exists(out / "epoch_2.ckpt"));
  EXPECT_FALSE(fs::exists(out / "epoch_3.ckpt"));

  std::istringstream lines(log.str());
  std::string line;
  int steps = 0, validations = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("type") == "step") {
      ++steps;
      EXPECT_TRUE(j.contains("loss_side"));
      EXPECT_TRUE(j.at("loss").is_number());
    } else {
      EXPECT_EQ(j.at("type"), "validation");
      ++validations;
    }
  }
  EXPECT_EQ(steps, 6);
  EXPECT_EQ(validations, 3);

  // The final checkpoint reproduces the trained model.
  const auto loaded = load_checkpoint<float>(out / "final.ckpt");
  const auto x = predict_image(model, val[0].image);
  EXPECT_EQ(testing::max_abs_diff(predict_image(loaded, val[0].image), x), 0.0);
}

TEST(Pipeline, TrainingIsReproducible) {
  const auto train = toy_samples(3, 32, 32, 6);
  std::vector<double> losses[2];
  std::vector<float> weights[2];
  for (int run = 0; run < 2; ++run) {
    SCTransNet<float> model(toy_training_config());
    for (const auto& s : train_epochs(model, train, {}).steps) losses[run].push_back(s.loss);
    weights[run] = model.params().get("head1.weight").value.values();
  }
  EXPECT_EQ(losses[0], losses[1]);
  EXPECT_EQ(weights[0], weights[1]);
}

TEST(Pipeline, MaxStepsStopsEarly) {
  SCTransNet<float> model(toy_training_config());
  TrainOptions opts;
  opts.max_steps = 2;
  EXPECT_EQ(train_epochs(model, toy_samples(4, 32, 32, 7), opts).steps.size(), 2U);
  EXPECT_THROW(train_epochs(model, {}, opts), PreconditionError);
}

TEST(Pipeline, NonFiniteLossNamesTheSource) {
  SCTransNet<float> model(toy_training_config());
  model.params().get("encoder.stage1.conv1.weight").value[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_epochs(model, toy_samples(2, 32, 32, 8), {});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_TRUE(testing::contains(e.what(), "encoder.stage1.conv1.weight")) << e.what();
  }
}

}  // namespace
}  // namespace sct
