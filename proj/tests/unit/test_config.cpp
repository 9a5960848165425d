#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sctrans/config.hpp"
#include "sctrans/errors.hpp"
#include "test_util.hpp"

namespace sct {
namespace {

TEST(ModelConfig, DefaultsDescribeTheReferenceNetwork) {
  const ModelConfig c;
  EXPECT_EQ(c.channels, (std::array<Index, kLevels>{32, 64, 128, 256}));
  EXPECT_EQ(c.bottleneck_channels, 512);
  EXPECT_EQ(c.total_channels(), 480);
  EXPECT_EQ(c.patch_size, 16);
  EXPECT_EQ(c.num_sctb, 4);
  EXPECT_EQ(c.num_heads, 1);
  EXPECT_TRUE(c.deep_supervision);
  EXPECT_FALSE(c.positional_encoding);
  EXPECT_EQ(c.lr0, 1e-3);
  EXPECT_EQ(c.lr_min, 1e-5);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_EQ(c.epochs, 1000);
  EXPECT_EQ(c.threshold, 0.5);
  EXPECT_EQ(c.decoder_channels(0), 32);
  EXPECT_EQ(c.decoder_channels(3), 128);
  EXPECT_EQ(c.spatial_multiple(), 16);
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, TextRoundTrip) {
  ModelConfig c;
  c.channels = {8, 16, 24, 32};
  c.bottleneck_channels = 40;
  c.expansion = 1.5;
  c.num_heads = 8;
  c.gslc = false;
  c.lr0 = 3.3e-4;
  c.loss_weights.side = {0.1, 0.2, 0.3, 0.4, 0.5};
  c.loss_weights.fused = 2.0 / 3.0;
  c.seed = 123456789;
  EXPECT_EQ(parse_model_config(to_text(c)), c);
}

TEST(ModelConfig, ValidationNamesTheField) {
  auto message = [](const std::string& text) {
    try {
      parse_model_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_TRUE(testing::contains(message("num_heads = 7"), "num_heads"));
  EXPECT_TRUE(testing::contains(message("channels = 32,64,64,256"), "channels"));
  EXPECT_TRUE(testing::contains(message("channels = 32,64"), "channels"));
  EXPECT_TRUE(testing::contains(message("patch_size = 12"), "patch_size"));
  EXPECT_TRUE(testing::contains(message("image_size = 100"), "image_size"));
  EXPECT_TRUE(testing::contains(message("lr_min = 1"), "lr_min"));
  EXPECT_TRUE(testing::contains(message("threshold = 1.5"), "threshold"));
  EXPECT_TRUE(testing::contains(message("loss_weights = 1,1,1"), "loss_weights"));
  EXPECT_TRUE(testing::contains(message("deep_supervision = maybe"), "deep_supervision"));
  EXPECT_TRUE(testing::contains(message("epochs = 1.5"), "epochs"));
}

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  const RunConfig r = parse_run_config(
      "# experiment\n"
      "data_root = /data/set   # trailing comment\n"
      "\n"
      "  num_sctb=2\n"
      "workers = 3\n"
      "connectivity = 4\n"
      "synth_count = 5\n");
  EXPECT_EQ(r.data_root, "/data/set");
  EXPECT_EQ(r.model.num_sctb, 2);
  EXPECT_EQ(r.workers, 3);
  EXPECT_EQ(r.synth.count, 5);
  EXPECT_EQ(r.metric_options().connectivity, Connectivity::four);
  EXPECT_EQ(r.resolve_split(r.test_split), std::filesystem::path("/data/set/img_idx/test.txt"));
  EXPECT_EQ(r.resolve_split("/abs/list.txt"), std::filesystem::path("/abs/list.txt"));
}

TEST(RunConfig, RejectsUnknownRepeatedAndMalformedLines) {
  EXPECT_THROW(parse_run_config("colour = blue\n"), ConfigError);
  EXPECT_THROW(parse_run_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_run_config("just words\n"), ConfigError);
  EXPECT_THROW(parse_run_config("workers = 0\n"), ConfigError);
  EXPECT_THROW(parse_run_config("connectivity = 6\n"), ConfigError);
  EXPECT_THROW(parse_run_config("synth_max_peak = 2\n"), ConfigError);
  try {
    parse_run_config("seed = 1\n\nbogus = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_TRUE(testing::contains(e.what(), "line 3"));
    EXPECT_TRUE(testing::contains(e.what(), "bogus"));
  }
}

TEST(RunConfig, TextRoundTripAndOverrides) {
  RunConfig r;
  r.data_root = "somewhere";
  r.checkpoint = "best.ckpt";
  r.match_radius = 2.5;
  r.synth.min_sigma = 0.75;
  set_run_option(r, "threshold", "0.4");
  set_run_option(r, "seed", "9");
  EXPECT_THROW(set_run_option(r, "nope", "1"), ConfigError);
  const RunConfig back = parse_run_config(to_text(r));
  EXPECT_EQ(back.model, r.model);
  EXPECT_EQ(back.data_root, r.data_root);
  EXPECT_EQ(back.checkpoint, r.checkpoint);
  EXPECT_EQ(back.match_radius, 2.5);
  EXPECT_EQ(back.synth.min_sigma, 0.75);
  EXPECT_EQ(back.model.threshold, 0.4);
  EXPECT_EQ(to_text(back), to_text(r));
}

TEST(RunConfig, LoadsFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "sct_config_test.cfg";
  std::ofstream(path) << "epochs = 3\nbatch_size = 2\n";
  const RunConfig r = load_run_config(path);
  EXPECT_EQ(r.model.epochs, 3);
  EXPECT_EQ(r.model.batch_size, 2);
  EXPECT_THROW(load_run_config(path.string() + ".missing"), ConfigError);
}

}  // namespace
}  // namespace sct
