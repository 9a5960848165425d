#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "sctrans/checkpoint.hpp"
#include "sctrans/config.hpp"
#include "sctrans/errors.hpp"
#include "sctrans/model.hpp"
#include "sctrans/optim.hpp"
#include "test_util.hpp"

namespace sct {
namespace {

namespace fs = std::filesystem;
using testing::random_tensor;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sct_model_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(ModelBudget, DefaultParameterCount) {
  const SCTransNet<float> model(ModelConfig{});
  const Index n = model.count_params();
  EXPECT_EQ(n, 12'014'755);
  EXPECT_LE(std::abs(static_cast<double>(n) - 11.19e6), 0.10 * 11.19e6);
  Index sum = 0;
  for (const auto& [part, count] : model.param_breakdown()) sum += count;
  EXPECT_EQ(sum, n);
  const auto parts = model.param_breakdown();
  EXPECT_EQ(parts.at("encoder."), 4'892'704);
  EXPECT_EQ(parts.at("sctb"), 4'538'904);
  EXPECT_EQ(parts.at("decoder."), 1'444'832);
}

TEST(ModelBudget, DefaultFlopsAt256) {
  const SCTransNet<float> model(ModelConfig{});
  const FlopBreakdown f = model.count_flops(256, 256);
  EXPECT_EQ(f.total(), 21'866'521'856);
  EXPECT_LE(std::abs(static_cast<double>(f.total()) - 20.24e9), 0.15 * 20.24e9);
  EXPECT_GT(f.encoder, 0);
  EXPECT_GT(f.transformer, 0);
  EXPECT_GT(f.decoder, 0);
  EXPECT_GT(f.heads, 0);
}

TEST(ModelBudget, AnalyticFlopsMatchTheCounter) {
  for (bool ds : {true, false}) {
    ModelConfig cfg;
    cfg.deep_supervision = ds;
    const SCTransNet<float> model(cfg);
    reset_flop_counter();
    model.predict(random_tensor<float>({1, 1, 64, 64}, 3));
    EXPECT_EQ(flop_counter(), model.count_flops(64, 64).total());
  }
}

Index params_with(void (*edit)(ModelConfig&)) {
  ModelConfig cfg;
  edit(cfg);
  return SCTransNet<float>(cfg).count_params();
}

TEST(ModelBudget, AblationParameterDeltas) {
  const Index base = params_with([](ModelConfig&) {});
  EXPECT_EQ(params_with([](ModelConfig& c) { c.spatial_embedding = false; }) - base, -51'840);
  EXPECT_EQ(params_with([](ModelConfig& c) { c.gslc = false; }) - base, -48);
  EXPECT_EQ(params_with([](ModelConfig& c) { c.num_heads = 8; }) - base, 0);
  EXPECT_EQ(params_with([](ModelConfig& c) { c.positional_encoding = true; }) - base, 480 * 16 * 16);
  EXPECT_EQ(params_with([](ModelConfig& c) { c.deep_supervision = false; }) - base, -746);
  EXPECT_EQ(params_with([](ModelConfig& c) { c.gate_sigmoid = false; }) - base, 0);
}

TEST(Model, RejectsBadInputs) {
  const SCTransNet<float> model(testing::toy_config());
  EXPECT_THROW(model.predict(Tensor<float>({1, 1, 40, 32})), PreconditionError);
  EXPECT_THROW(model.predict(Tensor<float>({1, 3, 32, 32})), PreconditionError);
  ModelConfig bad = testing::toy_config();
  bad.num_heads = 3;
  EXPECT_THROW(SCTransNet<float>{bad}, ConfigError);
}

TEST(Model, OutputShapesAndRange) {
  const SCTransNet<float> model(testing::toy_config());
  const auto y = model.predict(random_tensor<float>({2, 1, 32, 48}, 1));
  EXPECT_EQ(y.shape(), (Shape{2, 1, 32, 48}));
  for (float v : y.values()) {
    EXPECT_GT(v, 0.0F);
    EXPECT_LT(v, 1.0F);
  }
}

TEST(Model, SameSeedSameModel) {
  ModelConfig cfg = testing::toy_config();
  cfg.seed = 77;
  const SCTransNet<float> a(cfg), b(cfg);
  const auto x = random_tensor<float>({1, 1, 32, 32}, 2);
  EXPECT_EQ(testing::max_abs_diff(a.predict(x), b.predict(x)), 0.0);
  cfg.seed = 78;
  const SCTransNet<float> c(cfg);
  EXPECT_GT(testing::max_abs_diff(a.predict(x), c.predict(x)), 0.0);
}

TEST(Model, PredictLeavesRunningStatisticsAlone) {
  SCTransNet<float> model(testing::toy_config());
  const auto before = testing::to_vec(model.params().get("encoder.stage1.bn1.running_mean").value);
  model.predict(random_tensor<float>({1, 1, 32, 32}, 2));
  EXPECT_EQ(testing::to_vec(model.params().get("encoder.stage1.bn1.running_mean").value), before);
}

// Regression guard on the full forward pass of a fixed small model; regenerate with
// SCT_UPDATE_GOLDEN=1 after an intentional numerical change.
TEST(Model, GoldenForward) {
  ModelConfig cfg = testing::toy_config();
  cfg.seed = 2024;
  const SCTransNet<double> model(cfg);
  const auto y = model.predict(random_tensor<double>({1, 1, 32, 32}, 99, -2, 2));
  const fs::path path = fs::path(SCT_TEST_DATA_DIR) / "golden_toy_forward.txt";
  if (std::getenv("SCT_UPDATE_GOLDEN") != nullptr) {
    std::ofstream out(path);
    out.precision(17);
    for (double v : y.values()) out << v << '\n';
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << path;
  std::vector<double> expect;
  for (double v; in >> v;) expect.push_back(v);
  ASSERT_EQ(expect.size(), static_cast<std::size_t>(y.numel()));
  EXPECT_LE(testing::max_abs_diff(testing::to_vec(y), expect), 1e-9);
  // The float model built from the same seed agrees to single precision.
  const SCTransNet<float> single(cfg);
  const auto yf = single.predict(random_tensor<float>({1, 1, 32, 32}, 99, -2, 2));
  EXPECT_LE(testing::max_abs_diff(testing::to_vec(yf), expect), 1e-4);
}

TEST(Checkpoint, RoundTripIsExact) {
  const fs::path dir = temp_dir("roundtrip");
  ModelConfig cfg = testing::toy_config();
  cfg.seed = 5;
  cfg.positional_encoding = true;
  SCTransNet<float> model(cfg);
  // Make buffers non-default so they are seen to round-trip too.
  model.params().get("encoder.stage1.bn1.running_var").value.fill(2.5F);
  save_checkpoint(model, dir / "m.ckpt");
  EXPECT_FALSE(fs::exists(dir / "m.ckpt.partial"));
  const auto loaded = load_checkpoint<float>(dir / "m.ckpt");
  EXPECT_EQ(loaded.config(), cfg);
  for (const auto& p : model.params()) {
    EXPECT_EQ(testing::to_vec(p.value), testing::to_vec(loaded.params().get(p.name).value)) << p.name;
  }
  const auto x = random_tensor<float>({1, 1, 32, 32}, 3);
  EXPECT_EQ(testing::max_abs_diff(model.predict(x), loaded.predict(x)), 0.0);
  EXPECT_EQ(parse_model_config(read_checkpoint_config(dir / "m.ckpt")), cfg);
}

TEST(Checkpoint, TruncatedFilesAreRejectedWithoutSideEffects) {
  const fs::path dir = temp_dir("trunc");
  const SCTransNet<float> source(testing::toy_config());
  save_checkpoint(source, dir / "full.ckpt");
  std::ifstream in(dir / "full.ckpt", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ModelConfig other = testing::toy_config();
  other.seed = 999;
  SCTransNet<float> target(other);
  const auto before = testing::to_vec(target.params().get("head1.weight").value);
  for (std::size_t len : {std::size_t{0}, std::size_t{5}, std::size_t{12}, bytes.size() / 3, bytes.size() - 1}) {
    std::ofstream(dir / "cut.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(len));
    EXPECT_THROW(load_parameters(target, dir / "cut.ckpt"), CheckpointError) << len;
    EXPECT_THROW(load_checkpoint<float>(dir / "cut.ckpt"), CheckpointError) << len;
    EXPECT_EQ(testing::to_vec(target.params().get("head1.weight").value), before);
  }
  std::string corrupt = bytes;
  corrupt[0] = 'X';
  std::ofstream(dir / "magic.ckpt", std::ios::binary).write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
  EXPECT_THROW(load_checkpoint<float>(dir / "magic.ckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint<float>(dir / "missing.ckpt"), CheckpointError);
}

TEST(Checkpoint, IncompatibleModelsListTheDifferences) {
  const fs::path dir = temp_dir("incompat");
  ModelConfig cfg = testing::toy_config();
  save_checkpoint(SCTransNet<float>(cfg), dir / "a.ckpt");
  ModelConfig other = cfg;
  other.deep_supervision = false;
  other.gslc = false;
  SCTransNet<float> target(other);
  try {
    load_parameters(target, dir / "a.ckpt");
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_TRUE(testing::contains(msg, "head.fusion.weight")) << msg;
    EXPECT_TRUE(testing::contains(msg, "sctb1.cfn1.gate")) << msg;
  }
  ModelConfig wider = cfg;
  wider.bottleneck_channels = 12;
  SCTransNet<float> mismatched(wider);
  try {
    load_parameters(mismatched, dir / "a.ckpt");
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_TRUE(testing::contains(e.what(), "encoder.bottleneck.conv1.weight")) << e.what();
  }
  // Element type is part of the contract.
  SCTransNet<double> dbl(cfg);
  EXPECT_THROW(load_parameters(dbl, dir / "a.ckpt"), CheckpointError);
}

TEST(Adam, MatchesHandComputation) {
  ParamStore<double> store;
  Parameter<double>& p = store.add("w", Tensor<double>({2}, std::vector<double>{1.0, -0.5}));
  Adam<double> adam;
  const double grads[3][2] = {{0.3, -1.0}, {-0.2, 0.0}, {0.05, 2.0}};
  double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -0.5};
  const double lr = 0.01;
  for (int t = 1; t <= 3; ++t) {
    p.grad = Tensor<double>({2}, std::vector<double>{grads[t - 1][0], grads[t - 1][1]});
    adam.step(store, lr);
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.value[i], w[i], 1e-10);
    }
  }
  EXPECT_EQ(adam.steps(), 3);
}

TEST(Adam, SkipsBuffersAndTreatsMissingGradientAsZero) {
  ParamStore<double> store;
  Parameter<double>& buf = store.add("buf", Tensor<double>({1}, 3.0), false);
  Parameter<double>& idle = store.add("idle", Tensor<double>({1}, 1.0));
  buf.grad = Tensor<double>({1}, 1.0);
  Adam<double> adam;
  adam.step(store, 0.1);
  EXPECT_EQ(buf.value[0], 3.0);
  EXPECT_EQ(idle.value[0], 1.0);
}

TEST(CosineLr, EndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 1000, 1e-3, 1e-5), 1e-3);
  EXPECT_NEAR(cosine_lr(1000, 1000, 1e-3, 1e-5), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(500, 1000, 1e-3, 1e-5), (1e-3 + 1e-5) / 2, 1e-15);
  EXPECT_NEAR(cosine_lr(250, 1000, 1e-3, 1e-5), 1e-5 + (1e-3 - 1e-5) * (1 + std::sqrt(0.5)) / 2, 1e-15);
  double prev = 1;
  for (Index t = 0; t <= 1000; t += 50) {
    const double lr = cosine_lr(t, 1000, 1e-3, 1e-5);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
  EXPECT_THROW(cosine_lr(0, 0, 1e-3, 1e-5), PreconditionError);
}

TEST(Training, OneStepLowersTheLossOnItsBatch) {
  ModelConfig cfg = testing::toy_config();
  cfg.seed = 3;
  SCTransNet<double> model(cfg);
  const auto x = random_tensor<double>({2, 1, 32, 32}, 4);
  Tensor<double> mask({2, 1, 32, 32});
  for (Index i = 0; i < mask.numel(); i += 37) mask[i] = 1.0;
  auto loss_at = [&](bool step) {
    GradTape<double> tape;
    const Context<double> ctx{&tape, true, nullptr};
    const auto terms = total_loss(model.forward(ctx, tape.leaf(x)), mask, cfg.loss_weights);
    if (step) {
      model.params().zero_grad();
      tape.backward(terms.total);
    }
    return terms.total.value()[0];
  };
  Adam<double> adam;
  const double before = loss_at(true);
  adam.step(model.params(), 1e-3);
  EXPECT_LT(loss_at(false), before);
}

TEST(Training, GradientsReachEveryTrainableTensor) {
  ModelConfig cfg = testing::toy_config();
  SCTransNet<double> model(cfg);
  GradTape<double> tape;
  const Context<double> ctx{&tape, true, nullptr};
  Tensor<double> mask({1, 1, 32, 32});
  mask[100] = 1.0;
  const auto terms = total_loss(model.forward(ctx, tape.leaf(random_tensor<double>({1, 1, 32, 32}, 1))), mask,
                                cfg.loss_weights);
  model.params().zero_grad();
  tape.backward(terms.total);
  for (const auto& p : model.params()) {
    if (!p.trainable) continue;
    double norm = 0;
    for (double g : p.grad.values()) norm += g * g;
    // Biases feeding a batch norm legitimately get exactly zero.
    const bool pre_norm_bias = testing::contains(p.name, "conv.bias") || testing::contains(p.name, "conv1.bias") ||
                               testing::contains(p.name, "conv2.bias");
    if (!pre_norm_bias) EXPECT_GT(norm, 0.0) << p.name;
  }
}

}  // namespace
}  // namespace sct
