#include <gtest/gtest.h>

#include <fstream>
#include <functional>

#include "aigvdet/config.hpp"
#include "aigvdet/error.hpp"
#include "aigvdet/workflow.hpp"
#include "test_support.hpp"

using namespace aigvdet;
using aigvdet::fx::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kRuntime;
}

}  // namespace

TEST(Config, DefaultsMatchTheOperatingPoint) {
  const Config cfg;
  EXPECT_EQ(cfg.get_double("fusion.alpha"), 0.5);
  EXPECT_EQ(cfg.get_double("fusion.threshold"), 0.1);
  EXPECT_EQ(cfg.get_int("crop.size"), 448);
  EXPECT_EQ(cfg.get_int("sampling.frames_per_video"), 95);
  EXPECT_EQ(cfg.get_double("train.lr_init"), 1e-4);
  EXPECT_EQ(cfg.get_double("train.lr_min"), 1e-6);
  EXPECT_EQ(cfg.get_int("train.plateau_patience"), 5);
  EXPECT_EQ(cfg.get_int("split.train_n"), 500);
  EXPECT_EQ(cfg.get_int_list("eval.crf_grid"), (std::vector<int>{0, 18, 23, 28}));
  EXPECT_NO_THROW(validate_config(cfg));
}

TEST(Config, OverridesAreTypedAndUnknownKeysRejected) {
  Config cfg;
  cfg.apply_override("crop.size=224");
  EXPECT_EQ(cfg.get_int("crop.size"), 224);
  cfg.apply_override("jpeg_eq.enabled=false");
  EXPECT_FALSE(cfg.get_bool("jpeg_eq.enabled"));
  EXPECT_EQ(code_of([&] { cfg.apply_override("crop.sise=224"); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { cfg.apply_override("crop.size=big"); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { cfg.apply_override("no-equals-sign"); }), ErrorCode::kValidation);
}

TEST(Config, NestedAndFlatJsonMergeTheSameWay) {
  Config a, b;
  a.merge_json({{"crop", {{"size", 56}}}, {"model", {{"backbone", "tiny"}}}});
  b.merge_json({{"crop.size", 56}, {"model.backbone", "tiny"}});
  EXPECT_EQ(a.snapshot(), b.snapshot());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), Config().hash());
}

TEST(Config, PerGeneratorWatermarkFallsBackToGlobal) {
  Config cfg;
  cfg.apply_override("watermark.bottom_fraction=0.05");
  cfg.apply_override("watermark.generator.Pika=0.1");
  EXPECT_EQ(cfg.watermark_fraction("Pika"), 0.1);
  EXPECT_EQ(cfg.watermark_fraction("Emu"), 0.05);
}

TEST(Config, FileErrorsAreDistinguished) {
  TempDir dir;
  EXPECT_EQ(code_of([&] { Config::from_file(dir / "missing.json"); }), ErrorCode::kIo);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_EQ(code_of([&] { Config::from_file(dir / "bad.json"); }), ErrorCode::kParse);
  std::ofstream(dir / "ok.json") << R"({"fusion": {"alpha": 0.25}})";
  EXPECT_EQ(Config::from_file(dir / "ok.json").get_double("fusion.alpha"), 0.25);
}

TEST(Config, ShippedToyConfigIsValid) {
  const auto cfg = Config::from_file(std::filesystem::path(AIGVDET_SOURCE_DIR) / "configs/toy.json");
  EXPECT_NO_THROW(validate_config(cfg));
}

TEST(Config, ValidationRejectsOutOfRangeSettings) {
  const std::vector<std::string> bad = {
      "fusion.alpha=0",          "fusion.alpha=1",         "fusion.threshold=1.5", "watermark.bottom_fraction=1",
      "jpeg_eq.lo=95",           "crop.mode=diagonal",     "flow.estimator=magic", "model.backbone=vgg",
      "sampling.strategy=odd",   "eval.crf_grid=0,18,60",  "runtime.jobs=0",       "flow.fixed_max=0",
      "sampling.frames_per_video=1"};
  for (const auto& assignment : bad) {
    Config cfg;
    cfg.apply_override(assignment);
    EXPECT_EQ(code_of([&] { validate_config(cfg); }), ErrorCode::kValidation) << assignment;
  }
}
