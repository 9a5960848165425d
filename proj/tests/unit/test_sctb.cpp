#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracle.hpp"
#include "sctrans/errors.hpp"
#include "sctrans/sctb.hpp"
#include "test_util.hpp"

namespace sct {
namespace {

using testing::random_tensor;

template <typename T>
Levels<T> random_levels(const ModelConfig& cfg, Index batch, Index h, Index w, std::uint64_t seed,
                        bool halving = false) {
  Levels<T> out;
  for (int i = 0; i < kLevels; ++i) {
    const Index s = halving ? i : 0;
    out[static_cast<std::size_t>(i)] =
        Var<T>::constant(random_tensor<T>({batch, cfg.channels[static_cast<std::size_t>(i)], h >> s, w >> s},
                                          seed + static_cast<std::uint64_t>(i)));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> level_tensors(const Levels<T>& l) {
  std::vector<Tensor<T>> out;
  for (const auto& v : l) out.push_back(v.value());
  return out;
}

template <typename T>
Levels<T> as_levels(const std::vector<Var<T>>& v, std::size_t first = 0) {
  return {v[first], v[first + 1], v[first + 2], v[first + 3]};
}

template <typename T>
Var<T> flatten_levels(const Levels<T>& l) {
  std::vector<Var<T>> views;
  for (const auto& v : l) views.push_back(reshape(v, {1, v.shape().numel(), 1, 1}));
  return concat_channels<T>(views);
}

TEST(PatchEmbed, LevelsReachTheCommonGrid) {
  ModelConfig cfg;
  ParamStore<float> store;
  Builder<float> b(store, 1);
  const PatchEmbed<float> embed(b, cfg);
  const auto out = embed.forward({}, random_levels<float>(cfg, 1, 256, 256, 3, true));
  for (int i = 0; i < kLevels; ++i) {
    EXPECT_EQ(out[static_cast<std::size_t>(i)].shape(), (Shape{1, cfg.channels[static_cast<std::size_t>(i)], 16, 16}));
    EXPECT_EQ(embed.conv(i).spec().kernel_h, 16 >> i);
    EXPECT_EQ(embed.conv(i).spec().stride_h, 16 >> i);
  }
}

TEST(PatchEmbed, DiagonalOnesKernelSumsEachPatch) {
  ModelConfig cfg = testing::toy_config();
  ParamStore<double> store;
  Builder<double> b(store, 1);
  const PatchEmbed<double> embed(b, cfg);
  for (int i = 0; i < kLevels; ++i) {
    auto& w = embed.conv(i).weight().value;
    w.fill(0.0);
    const Index c = cfg.channels[static_cast<std::size_t>(i)], k = 16 >> i;
    for (Index o = 0; o < c; ++o)
      for (Index p = 0; p < k * k; ++p) w[(o * c + o) * k * k + p] = 1.0;
    embed.conv(i).bias()->value.fill(0.0);
  }
  Levels<double> in;
  for (int i = 0; i < kLevels; ++i) {
    Tensor<double> t({1, cfg.channels[static_cast<std::size_t>(i)], 32 >> i, 32 >> i});
    t.fill(0.75);
    in[static_cast<std::size_t>(i)] = Var<double>::constant(t);
  }
  const auto out = embed.forward({}, in);
  for (int i = 0; i < kLevels; ++i) {
    const double k = 16 >> i;
    for (double v : out[static_cast<std::size_t>(i)].value().values()) EXPECT_DOUBLE_EQ(v, k * k * 0.75);
  }
}

TEST(PatchEmbed, RejectsMismatchedExtents) {
  ModelConfig cfg = testing::toy_config();
  ParamStore<float> store;
  Builder<float> b(store, 1);
  const PatchEmbed<float> embed(b, cfg);
  EXPECT_THROW(embed.forward({}, random_levels<float>(cfg, 1, 24, 24, 1, true)), PreconditionError);
  EXPECT_THROW(embed.forward({}, random_levels<float>(cfg, 1, 32, 32, 1, false)), PreconditionError);
}

TEST(PatchEmbed, PositionTensorsAreZeroInitializedAndAdded) {
  ModelConfig cfg = testing::toy_config();
  ModelConfig with_pe = cfg;
  with_pe.positional_encoding = true;
  ParamStore<double> plain_store, pe_store;
  Builder<double> b1(plain_store, 5), b2(pe_store, 5);
  const PatchEmbed<double> plain(b1, cfg), pe(b2, with_pe);
  for (int i = 0; i < kLevels; ++i) {
    ASSERT_EQ(plain.position(i), nullptr);
    ASSERT_NE(pe.position(i), nullptr);
    EXPECT_EQ(pe.position(i)->value.shape(), (Shape{1, cfg.channels[static_cast<std::size_t>(i)], 2, 2}));
  }
  const auto in = random_levels<double>(cfg, 2, 32, 32, 9, true);
  const auto a = plain.forward({}, in);
  const auto z = pe.forward({}, in);
  for (std::size_t i = 0; i < kLevels; ++i) EXPECT_EQ(testing::to_vec(a[i].value()), testing::to_vec(z[i].value()));

  for (int i = 0; i < kLevels; ++i) pe.position(i)->value.fill(1.5);
  // Inputs at twice the training size: the grid doubles and the constant survives resampling.
  const auto big = random_levels<double>(cfg, 1, 64, 64, 11, true);
  const auto base = plain.forward({}, big);
  const auto shifted = pe.forward({}, big);
  for (std::size_t i = 0; i < kLevels; ++i) {
    ASSERT_EQ(shifted[i].shape(), base[i].shape());
    for (Index j = 0; j < base[i].value().numel(); ++j)
      EXPECT_NEAR(shifted[i].value()[j] - base[i].value()[j], 1.5, 1e-12);
  }
}

TEST(SSCA, AttentionRowsAreDistributionsOverAllChannels) {
  for (Index heads : {1, 2}) {
    ModelConfig cfg = testing::toy_config();
    cfg.num_heads = heads;
    ParamStore<float> store;
    Builder<float> b(store, 2);
    const SCTBlock<float> block(b, "blk", cfg);
    std::vector<Tensor<float>> probe;
    const Context<float> ctx{nullptr, false, &probe};
    block.forward(ctx, random_levels<float>(cfg, 2, 3, 5, 4));
    ASSERT_EQ(probe.size(), static_cast<std::size_t>(kLevels));
    for (int i = 0; i < kLevels; ++i) {
      const Tensor<float>& a = probe[static_cast<std::size_t>(i)];
      const Index c = cfg.channels[static_cast<std::size_t>(i)];
      EXPECT_EQ(a.shape(), (Shape{2 * heads, c / heads, 20 / heads}));
      const Index cols = a.dim(2);
      for (Index r = 0; r < a.numel() / cols; ++r) {
        double s = 0;
        for (Index j = 0; j < cols; ++j) {
          const float v = a[r * cols + j];
          EXPECT_GE(v, 0.0F);
          EXPECT_LE(v, 1.0F);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(SSCA, ProbeShapeAtDefaultWidths) {
  ModelConfig cfg;
  cfg.num_sctb = 1;
  ParamStore<float> store;
  Builder<float> b(store, 2);
  const SCTBlock<float> block(b, "blk", cfg);
  std::vector<Tensor<float>> probe;
  block.forward({nullptr, false, &probe}, random_levels<float>(cfg, 1, 4, 4, 1));
  ASSERT_EQ(probe.size(), 4U);
  for (int i = 0; i < kLevels; ++i) EXPECT_EQ(probe[static_cast<std::size_t>(i)].shape(), (Shape{1, cfg.channels[static_cast<std::size_t>(i)], 480}));
}

TEST(SSCA, MixesValuesWithTheAttentionMatrix) {
  ModelConfig cfg = testing::toy_config();
  cfg.spatial_embedding = false;
  ParamStore<double> store;
  Builder<double> b(store, 3);
  const SSCA<double> ssca(b, "ssca", cfg);
  // Identity value and output projections leave A V visible at the output.
  auto identity = [](Parameter<double>& p) {
    const Index c = p.value.dim(0);
    p.value.fill(0.0);
    for (Index o = 0; o < c; ++o) p.value[o * c + o] = 1.0;
  };
  identity(ssca.value_pointwise().weight());
  for (auto& p : store) {
    if (testing::contains(p.name, ".proj")) identity(p);
  }
  const Index hw = 6;
  const auto normed = random_levels<double>(cfg, 1, 2, 3, 21);
  const auto all = Var<double>::constant(random_tensor<double>({1, 20, 2, 3}, 31));
  std::vector<Tensor<double>> probe;
  const auto out = ssca.forward({nullptr, false, &probe}, normed, all);
  for (int i = 0; i < kLevels; ++i) {
    const Index c = cfg.channels[static_cast<std::size_t>(i)];
    const auto expect = oracle::naive_matmul(testing::to_vec(probe[static_cast<std::size_t>(i)]),
                                             testing::to_vec(all.value()), 1, static_cast<int>(c), 20,
                                             static_cast<int>(hw));
    const auto got = testing::to_vec(out[static_cast<std::size_t>(i)].value());
    ASSERT_EQ(got.size(), expect.size());
    for (std::size_t j = 0; j < got.size(); ++j) EXPECT_NEAR(got[j], expect[j], 1e-12);
  }
}

TEST(SSCA, InvariantToAConsistentReorderingOfKeyValueChannels) {
  ModelConfig cfg = testing::toy_config();
  cfg.spatial_embedding = false;
  ParamStore<double> store;
  Builder<double> b(store, 4);
  const SSCA<double> ssca(b, "ssca", cfg);
  const auto normed = random_levels<double>(cfg, 2, 2, 2, 41);
  const auto all = Var<double>::constant(random_tensor<double>({2, 20, 2, 2}, 51));
  std::vector<Tensor<double>> p1, p2;
  const auto before = ssca.forward({nullptr, false, &p1}, normed, all);

  std::vector<Index> perm(20);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  for (Parameter<double>* p : {&ssca.key_pointwise().weight(), &ssca.value_pointwise().weight()}) {
    const Tensor<double> old = p->value;
    for (Index r = 0; r < 20; ++r)
      for (Index c = 0; c < 20; ++c) p->value[r * 20 + c] = old[perm[static_cast<std::size_t>(r)] * 20 + c];
  }
  const auto after = ssca.forward({nullptr, false, &p2}, normed, all);
  for (std::size_t i = 0; i < kLevels; ++i) {
    EXPECT_LE(testing::max_abs_diff(before[i].value(), after[i].value()), 1e-12);
    // Attention columns follow the permutation.
    const Index rows = p1[i].numel() / 20;
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < 20; ++c)
        EXPECT_NEAR(p2[i][r * 20 + c], p1[i][r * 20 + perm[static_cast<std::size_t>(c)]], 1e-12);
  }
}

TEST(SSCA, TemperatureIsRootOfTotalChannels) {
  ModelConfig cfg;
  ParamStore<float> store;
  Builder<float> b(store, 1);
  EXPECT_DOUBLE_EQ(SSCA<float>(b, "s", cfg).temperature(), std::sqrt(480.0));
}

TEST(CFN, ExpansionWidths) {
  ModelConfig cfg;
  ParamStore<float> store;
  Builder<float> b(store, 1);
  const Index expect[4] = {84, 170, 340, 680};
  for (int i = 0; i < kLevels; ++i) {
    EXPECT_EQ(CFN<float>(b, "cfn" + std::to_string(i), cfg.channels[static_cast<std::size_t>(i)], cfg).expanded(),
              expect[i]);
  }
}

TEST(CFN, ZeroContractionIsIdentity) {
  ModelConfig cfg;
  ParamStore<float> store;
  Builder<float> b(store, 1);
  const CFN<float> cfn(b, "cfn", 32, cfg);
  store.get("cfn.contract.weight").value.fill(0.0F);
  const auto x = random_tensor<float>({2, 32, 3, 3}, 4);
  const auto y = cfn.forward({}, Var<float>::constant(x)).value();
  EXPECT_EQ(testing::max_abs_diff(x, y), 0.0);
}

template <typename T>
void compare_cfn_with_oracle(double tol, bool gate, bool gate_sigmoid) {
  ModelConfig cfg;
  cfg.gslc = gate;
  cfg.gate_sigmoid = gate_sigmoid;
  ParamStore<T> store;
  Builder<T> b(store, 17);
  const CFN<T> cfn(b, "cfn", 32, cfg);
  // Non-trivial norm affine.
  store.get("cfn.norm.weight").value = random_tensor<T>({32}, 2, 0.5, 1.5);
  store.get("cfn.norm.bias").value = random_tensor<T>({32}, 3);
  const auto x = random_tensor<T>({1, 32, 4, 4}, 5, -2, 2);
  oracle::CfnWeights w;
  w.ln_gamma = testing::to_vec(store.get("cfn.norm.weight").value);
  w.ln_beta = testing::to_vec(store.get("cfn.norm.bias").value);
  w.expand = testing::to_vec(store.get("cfn.expand.weight").value);
  w.dw3 = testing::to_vec(store.get("cfn.dw3.weight").value);
  w.dw5 = testing::to_vec(store.get("cfn.dw5.weight").value);
  w.contract = testing::to_vec(store.get("cfn.contract.weight").value);
  if (gate) w.gate = testing::to_vec(store.get("cfn.gate").value);
  w.gate_sigmoid = gate_sigmoid;
  const auto expect = oracle::naive_cfn(testing::to_vec(x), 32, 4, 4, 84, w);
  const auto got = testing::to_vec(cfn.forward({}, Var<T>::constant(x)).value());
  ASSERT_EQ(got.size(), expect.size());
  double err = 0;
  for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got[i] - expect[i]));
  EXPECT_LE(err, tol);
}

TEST(CFN, MatchesNaiveReference) {
  compare_cfn_with_oracle<float>(1e-5, true, true);
  compare_cfn_with_oracle<double>(1e-12, true, true);
  compare_cfn_with_oracle<double>(1e-12, true, false);
  compare_cfn_with_oracle<double>(1e-12, false, true);
}

TEST(SCTBlock, ZeroedBranchesPassInputsThroughExactly) {
  ModelConfig cfg;
  ParamStore<float> store;
  Builder<float> b(store, 8);
  const SCTBlock<float> block(b, "blk", cfg);
  testing::zero_params(store, [](const std::string& n) {
    return testing::contains(n, ".proj") || testing::contains(n, ".contract");
  });
  const auto in = random_levels<float>(cfg, 1, 4, 4, 6);
  const auto out = block.forward({}, in);
  for (std::size_t i = 0; i < kLevels; ++i) EXPECT_EQ(testing::max_abs_diff(in[i].value(), out[i].value()), 0.0);
}

TEST(SCTBlock, RejectsMismatchedLevels) {
  ModelConfig cfg = testing::toy_config();
  ParamStore<float> store;
  Builder<float> b(store, 8);
  const SCTBlock<float> block(b, "blk", cfg);
  auto in = random_levels<float>(cfg, 1, 4, 4, 6);
  in[2] = Var<float>::constant(random_tensor<float>({1, 6, 4, 2}, 1));
  EXPECT_THROW(block.forward({}, in), ConfigError);
}

TEST(FeatureMapper, ZeroedConvReturnsEncoderFeatures) {
  ModelConfig cfg = testing::toy_config();
  ParamStore<float> store;
  Builder<float> b(store, 8);
  const FeatureMapper<float> fm(b, cfg);
  testing::zero_params(store, [](const std::string& n) { return testing::contains(n, ".conv."); });
  const auto coarse = random_levels<float>(cfg, 1, 2, 2, 1);
  const auto enc = random_levels<float>(cfg, 1, 32, 32, 2, true);
  const auto out = fm.forward({}, coarse, enc);
  for (std::size_t i = 0; i < kLevels; ++i) EXPECT_EQ(testing::max_abs_diff(enc[i].value(), out[i].value()), 0.0);
}

TEST(ChannelTransformer, OutputsMatchEncoderShapesAcrossSizes) {
  ModelConfig cfg = testing::toy_config();
  cfg.num_sctb = 2;
  ParamStore<float> store;
  Builder<float> b(store, 8);
  const ChannelTransformer<float> ct(b, cfg);
  EXPECT_EQ(ct.blocks().size(), 2U);
  for (Index s : {32, 64, 96}) {
    const auto enc = random_levels<float>(cfg, 1, s, s + 32, 3, true);
    const auto out = ct.forward({}, enc);
    for (std::size_t i = 0; i < kLevels; ++i) {
      EXPECT_EQ(out[i].shape(), enc[i].shape());
      EXPECT_TRUE(all_finite(out[i].value()));
    }
  }
}

TEST(ChannelTransformer, BlocksAreNotShared) {
  ModelConfig cfg = testing::toy_config();
  ParamStore<float> store;
  Builder<float> b(store, 8);
  const ChannelTransformer<float> ct(b, cfg);
  ASSERT_EQ(ct.blocks().size(), 4U);
  EXPECT_NE(&store.get("sctb1.ssca.key.pw.weight"), &store.get("sctb2.ssca.key.pw.weight"));
  EXPECT_GT(testing::max_abs_diff(store.get("sctb1.ssca.key.pw.weight").value, store.get("sctb2.ssca.key.pw.weight").value), 0.0);
}

// Gradient checks on small widths.

ModelConfig grad_config() {
  ModelConfig cfg = testing::toy_config();
  cfg.num_sctb = 1;
  return cfg;
}

std::vector<Tensor<double>> level_inputs(const ModelConfig& cfg, Index h, Index w, std::uint64_t seed,
                                         bool halving = false) {
  return level_tensors(random_levels<double>(cfg, 1, h, w, seed, halving));
}

TEST(SCTBGradients, SSCA) {
  for (Index heads : {1, 2}) {
    ModelConfig cfg = grad_config();
    cfg.num_heads = heads;
    ParamStore<double> store;
    Builder<double> b(store, 3);
    const SSCA<double> ssca(b, "ssca", cfg);
    auto inputs = level_inputs(cfg, 3, 3, 7);
    inputs.push_back(random_tensor<double>({1, 20, 3, 3}, 70));
    const auto r = testing::check_gradients(
        store, inputs,
        [&](const Context<double>& ctx, const auto& v) {
          return flatten_levels(ssca.forward(ctx, as_levels(v), v[4]));
        },
        true, 9, 10);
    EXPECT_LE(r.max_rel, 1e-4) << r.worst;
  }
}

TEST(SCTBGradients, CFNVariants) {
  for (int variant = 0; variant < 3; ++variant) {
    ModelConfig cfg = grad_config();
    cfg.gslc = variant != 2;
    cfg.gate_sigmoid = variant != 1;
    ParamStore<double> store;
    Builder<double> b(store, 3);
    const CFN<double> cfn(b, "cfn", 6, cfg);
    const auto r = testing::check_gradients(
        store, {random_tensor<double>({2, 6, 3, 3}, 8)},
        [&](const Context<double>& ctx, const auto& v) { return cfn.forward(ctx, v[0]); }, true, 9, 16);
    EXPECT_LE(r.max_rel, 1e-4) << variant << " " << r.worst;
  }
}

TEST(SCTBGradients, FullBlock) {
  for (bool spatial : {true, false}) {
    ModelConfig cfg = grad_config();
    cfg.spatial_embedding = spatial;
    ParamStore<double> store;
    Builder<double> b(store, 3);
    const SCTBlock<double> block(b, "blk", cfg);
    const auto r = testing::check_gradients(
        store, level_inputs(cfg, 2, 3, 12),
        [&](const Context<double>& ctx, const auto& v) { return flatten_levels(block.forward(ctx, as_levels(v))); },
        true, 9, 6);
    EXPECT_LE(r.max_rel, 1e-4) << r.worst;
  }
}

TEST(SCTBGradients, PatchEmbedWithPositions) {
  ModelConfig cfg = grad_config();
  cfg.positional_encoding = true;
  cfg.patch_size = 8;
  cfg.image_size = 16;
  ParamStore<double> store;
  Builder<double> b(store, 3);
  const PatchEmbed<double> embed(b, cfg);
  for (int i = 0; i < kLevels; ++i) embed.position(i)->value = random_tensor<double>(embed.position(i)->value.shape(), 40 + static_cast<std::uint64_t>(i));
  // 32x32 inputs give a 4x4 grid, so the 2x2 position tensors are resampled.
  const auto r = testing::check_gradients(
      store, level_inputs(cfg, 32, 32, 13, true),
      [&](const Context<double>& ctx, const auto& v) { return flatten_levels(embed.forward(ctx, as_levels(v))); },
      true, 9, 8);
  EXPECT_LE(r.max_rel, 1e-4) << r.worst;
}

TEST(SCTBGradients, FeatureMapper) {
  ModelConfig cfg = grad_config();
  ParamStore<double> store;
  Builder<double> b(store, 3);
  const FeatureMapper<double> fm(b, cfg);
  auto inputs = level_inputs(cfg, 2, 2, 14);
  for (auto& t : level_inputs(cfg, 16, 16, 15, true)) inputs.push_back(t);
  const auto r = testing::check_gradients(
      store, inputs,
      [&](const Context<double>& ctx, const auto& v) {
        return flatten_levels(fm.forward(ctx, as_levels(v), as_levels(v, 4)));
      },
      true, 9, 8);
  EXPECT_LE(r.max_rel, 1e-4) << r.worst;
}

TEST(SCTBGradients, WholeSkipPath) {
  ModelConfig cfg = grad_config();
  cfg.num_sctb = 2;
  cfg.patch_size = 8;
  ParamStore<double> store;
  Builder<double> b(store, 3);
  const ChannelTransformer<double> ct(b, cfg);
  const auto r = testing::check_gradients(
      store, level_inputs(cfg, 16, 16, 16, true),
      [&](const Context<double>& ctx, const auto& v) { return flatten_levels(ct.forward(ctx, as_levels(v))); },
      true, 9, 4);
  EXPECT_LE(r.max_rel, 1e-4) << r.worst;
}

}  // namespace
}  // namespace sct
