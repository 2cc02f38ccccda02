#include <gtest/gtest.h>

#include <fstream>

#include "hspk/config.hpp"
#include "hspk/error.hpp"
#include "temp_dir.hpp"

using namespace hspk;
using hspk::testing::TempDir;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, DefaultsRoundTripThroughJson) {
  const RunConfig a = parse_run_config(json::object());
  const json ja = to_json(a);
  EXPECT_EQ(to_json(parse_run_config(ja)), ja);
  EXPECT_EQ(a.data.label_count, 5883u);
  EXPECT_EQ(a.data.configs, 3u);
  EXPECT_EQ(a.train.batch_size, 8u);
  EXPECT_EQ(a.train.hist_bins, 256u);
}

TEST(RunConfig, SectionsReachTheLibraryConfigs) {
  const auto c = parse_run_config(json::parse(R"({
    "seed": 9,
    "data": {"label_extent": 16, "split_ratios": {"train": 0.8, "val": 0.1, "test": 0.1}},
    "train": {"variant": "unet_baseline", "preset": "reduced30", "adam": {"lr": 0.001}},
    "model": {"encoder_channels": [4, 4, 4, 4], "decoder_channels": [4, 4, 4, 4]},
    "hcu": {"bins": 64, "sigma": 0.02},
    "loss": {"lambda_mi": 2.0, "lambda_ssim": 3.0}
  })"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.data.label_extent, 16u);
  EXPECT_EQ(c.data.ratios.train, 0.8);
  EXPECT_EQ(c.train.variant, Variant::unet_baseline);
  EXPECT_EQ(c.train.preset, Preset::reduced30);
  EXPECT_EQ(c.train.adam.lr, 0.001);
  EXPECT_EQ(c.train.encoder_channels.size(), 4u);
  EXPECT_EQ(c.train.hist_bins, 64u);
  EXPECT_EQ(c.train.hist_sigma, 0.02);
  EXPECT_EQ(c.train.weights.lambda_mi, 2.0);
  EXPECT_EQ(c.train.weights.lambda_ssim, 3.0);
}

TEST(RunConfig, UnknownKeysRejectedAtEveryLevel) {
  EXPECT_NE(error_of(json{{"sed", 1}}).find("'sed'"), std::string::npos);
  EXPECT_NE(error_of(json{{"train", {{"epoch", 1}}}}).find("'train.epoch'"), std::string::npos);
  EXPECT_NE(error_of(json{{"train", {{"adam", {{"beta3", 1}}}}}}).find("'train.adam.beta3'"), std::string::npos);
  EXPECT_NE(error_of(json{{"data", {{"split_ratios", {{"dev", 0.1}}}}}}).find("'data.split_ratios.dev'"),
            std::string::npos);
}

TEST(RunConfig, TypeAndValueErrors) {
  EXPECT_NE(error_of(json{{"train", {{"epochs", -1}}}}).find("non-negative integer"), std::string::npos);
  EXPECT_NE(error_of(json{{"train", {{"epochs", "3"}}}}).find("train.epochs"), std::string::npos);
  EXPECT_NE(error_of(json{{"train", {{"test_eval", 1}}}}).find("boolean"), std::string::npos);
  EXPECT_NE(error_of(json{{"data", 3}}).find("object"), std::string::npos);
  EXPECT_NE(error_of(json{{"train", {{"batch_size", 0}}}}).find("batch_size"), std::string::npos);
  EXPECT_NE(error_of(json{{"train", {{"preset", "half"}}}}).find("half"), std::string::npos);
  EXPECT_NE(error_of(json{{"hcu", {{"bins", 1}}}}).find("bins"), std::string::npos);
  EXPECT_NE(error_of(json{{"data", {{"labels", "png:x"}}}}).find("png:x"), std::string::npos);
}

TEST(RunConfig, Overrides) {
  json doc = json::object();
  apply_override(doc, "train.epochs=2");
  apply_override(doc, "train.variant=pix2pix_baseline");
  apply_override(doc, "model.tfrm_width=[2,2,2]");
  apply_override(doc, "seed=4");
  const auto c = parse_run_config(doc);
  EXPECT_EQ(c.train.epochs, 2u);
  EXPECT_EQ(c.train.variant, Variant::pix2pix_baseline);
  EXPECT_EQ(c.train.tfrm_width, (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_EQ(c.seed, 4u);
  EXPECT_THROW(apply_override(doc, "epochs"), ConfigError);
  EXPECT_THROW(apply_override(doc, "train..epochs=1"), ConfigError);
}

TEST(RunConfig, FileThenOverrides) {
  TempDir dir;
  {
    std::ofstream(dir / "run.json") << R"({"train": {"epochs": 7, "batch_size": 2}})";
  }
  const auto c = resolve_run_config(dir / "run.json", {"train.epochs=3"});
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.train.batch_size, 2u);
}

TEST(RunConfig, MissingFileNamesThePath) {
  try {
    resolve_run_config("/nonexistent/run.json", {});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.json"), std::string::npos);
  }
}

TEST(RunConfig, ResolvedEchoParsesBackIdentically) {
  TempDir dir;
  const auto c = resolve_run_config({}, {"train.epochs=5", "data.configs=2"});
  write_resolved(c, dir.path());
  const auto back = resolve_run_config(dir / "config.resolved", {});
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(RunConfig, LabelSourceStrings) {
  DataSection d;
  auto s = label_source(d, 3);
  EXPECT_EQ(s.kind, "synthetic");
  EXPECT_EQ(s.seed, 3u);
  EXPECT_EQ(s.count, 5883u);
  d.labels = "npy:/data/organ.npz:train_images";
  s = label_source(d, 3);
  EXPECT_EQ(s.kind, "npy");
  EXPECT_EQ(s.path, "/data/organ.npz");
  EXPECT_EQ(s.key, "train_images");
  d.labels = "npy:images.npy";
  s = label_source(d, 3);
  EXPECT_EQ(s.path, "images.npy");
  EXPECT_EQ(s.key, "");
  d.labels = "npy:";
  EXPECT_THROW(label_source(d, 3), ConfigError);
}
