#include <gtest/gtest.h>

#include <cmath>

#include "aigvdet/error.hpp"
#include "aigvdet/model.hpp"
#include "aigvdet/train.hpp"
#include "test_support.hpp"

using namespace aigvdet;
using aigvdet::fx::TempDir;

namespace {

BranchConfig small(const std::string& backbone = "tiny", int size = 32) { return {backbone, size, false}; }

// Loss of one labeled input under the model's current parameters.
double loss_at(const Model& m, const ModelInput& in, int y) { return bce_with_logit(m.logit(in), y).loss; }

// Central differences on a spread of parameters versus accumulate_gradients. The
// step is small enough not to cross ReLU kinks and large enough to stay above
// float32 rounding.
void expect_gradients_match(Model& model, const ModelInput& in, int y) {
  nn::Gradients grads(model.params());
  model.accumulate_gradients(in, y, grads);
  int checked = 0;
  for (int pi = 0; pi < static_cast<int>(model.params().size()); ++pi) {
    auto& p = model.params()[pi];
    for (std::size_t k : {std::size_t{0}, p.value.size() / 2, p.value.size() - 1}) {
      const float saved = p.value[k];
      const float h = 1e-3f * std::max(1.0f, std::abs(saved));
      p.value[k] = saved + h;
      const double up = loss_at(model, in, y);
      p.value[k] = saved - h;
      const double down = loss_at(model, in, y);
      p.value[k] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(h));
      const double analytic = grads[pi][k];
      EXPECT_NEAR(analytic, numeric, 2e-2 * std::max(std::abs(numeric), std::abs(analytic)) + 2e-4)
          << p.name << "[" << k << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 0);
}

}  // namespace

TEST(Encode, FeatureLengthIsTheBackboneWidth) {
  BranchModel resnet(Modality::kSpatial, {"resnet50", 448, false}, 1);
  EXPECT_EQ(resnet.backbone().width(), 2048);
  EXPECT_EQ(resnet.head().width(), 2048);
  BranchModel tiny(Modality::kSpatial, small(), 1);
  const auto f = tiny.encode(fx::texture(32, 32, 1));
  EXPECT_EQ(static_cast<int>(f.values.size()), tiny.backbone().width());
  EXPECT_EQ(f.source, Modality::kSpatial);
}

TEST(Encode, DeterministicInEvalMode) {
  BranchModel m(Modality::kFlow, small("resnet-mini"), 2);
  const auto img = fx::texture(32, 32, 2);
  EXPECT_EQ(m.encode(img).values, m.encode(img).values);
}

TEST(Encode, WrongInputSizeIsAShapeError) {
  BranchModel m(Modality::kSpatial, small("tiny", 448), 3);
  try {
    m.encode(RgbImage(300, 300));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
  BranchModel native(Modality::kFlow, small("tiny", 0), 3);
  EXPECT_NO_THROW(native.encode(fx::texture(40, 24, 3)));
}

TEST(Classify, ZeroFeatureGivesOneHalf) {
  BranchModel m(Modality::kSpatial, small(), 4);
  EXPECT_EQ(m.params()[m.head().bias_index()].value[0], 0.0f);
  EXPECT_DOUBLE_EQ(m.classify({std::vector<float>(static_cast<std::size_t>(m.head().width()), 0.0f)}), 0.5);
}

TEST(Classify, OutputIsAProbabilityForAnyFeature) {
  BranchModel m(Modality::kSpatial, small(), 5);
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> f(static_cast<std::size_t>(m.head().width()));
    for (auto& v : f) v = static_cast<float>((uniform01(rng) - 0.5) * 20.0);
    const double p = m.classify({f});
    ASSERT_GT(p, 0.0);
    ASSERT_LT(p, 1.0);
  }
}

TEST(Classify, MonotoneAlongTheHeadWeights) {
  BranchModel m(Modality::kSpatial, small(), 6);
  const auto& w = m.params()[m.head().weight_index()].value;
  double previous = 0.0;
  for (double t : {0.0, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5}) {
    std::vector<float> f(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) f[i] = static_cast<float>(t * w[i]);
    const double p = m.classify({f});
    EXPECT_GE(p, previous);
    previous = p;
  }
  EXPECT_GT(previous, 1.0 - 1e-6);
}

TEST(FuseFeatures, ConcatAndAdd) {
  FeatureVector a{std::vector<float>(2048, 1.0f)}, b{std::vector<float>(2048, 2.0f)};
  EXPECT_EQ(fuse_features(a, b, FeatureFusion::kConcat).values.size(), 4096u);
  FeatureVector zero{std::vector<float>(2048, 0.0f)};
  EXPECT_EQ(fuse_features(a, zero, FeatureFusion::kAdd).values, a.values);
  EXPECT_EQ(fuse_features({{1, 2}}, {{3, 4}}, FeatureFusion::kAdd).values, (std::vector<float>{4, 6}));
  EXPECT_THROW(fuse_features({{1, 2}}, {{3}}, FeatureFusion::kAdd), Error);
}

TEST(FeatureFusionModel, HeadWidthFollowsFusionKind) {
  FeatureFusionModel concat(FeatureFusion::kConcat, small(), 7);
  FeatureFusionModel add(FeatureFusion::kAdd, small(), 7);
  EXPECT_EQ(concat.head().width(), 2 * add.head().width());
  EXPECT_EQ(concat.variant(), Variant::kFFConcat);
  EXPECT_EQ(add.variant(), Variant::kFFAdd);
  const auto img = fx::texture(32, 32, 7), flow = fx::texture(32, 32, 8);
  EXPECT_THROW(concat.logit({&img, nullptr}), Error);
  const double p = concat.probability({&img, &flow});
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);
}

TEST(Gradients, BranchModelMatchesFiniteDifferences) {
  for (const char* backbone : {"tiny", "resnet-mini"}) {
    SCOPED_TRACE(backbone);
    BranchModel m(Modality::kSpatial, small(backbone, 16), 11);
    const auto img = fx::texture(16, 16, 12);
    expect_gradients_match(m, {&img, nullptr}, 1);
    expect_gradients_match(m, {&img, nullptr}, 0);
  }
}

TEST(Gradients, FeatureFusionModelMatchesFiniteDifferences) {
  for (FeatureFusion kind : {FeatureFusion::kConcat, FeatureFusion::kAdd}) {
    FeatureFusionModel m(kind, small("tiny", 16), 13);
    const auto img = fx::texture(16, 16, 14), flow = fx::texture(16, 16, 15);
    expect_gradients_match(m, {&img, &flow}, 1);
  }
}

TEST(Gradients, ResNet50BottleneckPathMatchesFiniteDifferences) {
  BranchModel m(Modality::kSpatial, small("resnet50", 32), 16);
  const auto img = fx::texture(32, 32, 17);
  nn::Gradients grads(m.params());
  m.accumulate_gradients({&img, nullptr}, 1, grads);
  // Spot-check the head, the stem and the last bottleneck.
  for (int pi : {m.head().weight_index(), m.head().bias_index(), 0, 1, static_cast<int>(m.params().size()) - 3}) {
    auto& p = m.params()[pi];
    const std::size_t k = 0;
    const float saved = p.value[k];
    const float h = 1e-3f * std::max(1.0f, std::abs(saved));
    p.value[k] = saved + h;
    const double up = loss_at(m, {&img, nullptr}, 1);
    p.value[k] = saved - h;
    const double down = loss_at(m, {&img, nullptr}, 1);
    p.value[k] = saved;
    const double numeric = (up - down) / (2.0 * static_cast<double>(h));
    EXPECT_NEAR(grads[pi][k], numeric, 2e-2 * std::abs(numeric) + 2e-4) << p.name;
  }
}

TEST(Checkpoint, RoundTripPreservesOutputsAndRecipe) {
  TempDir dir;
  for (Variant v : {Variant::kSSpatial, Variant::kSOptical, Variant::kSOpticalNoCp, Variant::kFFConcat, Variant::kFFAdd}) {
    SCOPED_TRACE(to_string(v));
    auto model = make_model(v, small("resnet-mini"), 21);
    const nlohmann::json recipe = {{"variant", to_string(v)}, {"lr", 1e-4}};
    const auto path = dir / (std::string(to_string(v)) + ".ckpt");
    save_checkpoint(*model, path, recipe);
    const auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.model->variant(), v);
    EXPECT_EQ(loaded.recipe, recipe);
    EXPECT_EQ(loaded.recipe_fingerprint, recipe_fingerprint(recipe));
    ASSERT_EQ(loaded.model->params().size(), model->params().size());
    for (std::size_t i = 0; i < model->params().size(); ++i)
      EXPECT_EQ(loaded.model->params()[static_cast<int>(i)].value, model->params()[static_cast<int>(i)].value);
    const auto img = fx::texture(32, 32, 22), flow = fx::texture(32, 32, 23);
    EXPECT_EQ(loaded.model->logit({&img, &flow}), model->logit({&img, &flow}));
  }
  EXPECT_THROW(make_model(Variant::kAIGVDet, small(), 0), Error);
}

TEST(Checkpoint, DamagedFilesAreRejected) {
  TempDir dir;
  auto model = make_model(Variant::kSSpatial, small(), 1);
  save_checkpoint(*model, dir / "a.ckpt", {{"x", 1}});
  auto bytes = read_bytes(dir / "a.ckpt");
  bytes[0] = 'X';
  write_bytes_atomic(dir / "magic.ckpt", bytes);
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), Error);
  bytes = read_bytes(dir / "a.ckpt");
  bytes.resize(bytes.size() - 100);
  write_bytes_atomic(dir / "short.ckpt", bytes);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), Error);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
}

TEST(Checkpoint, PretrainedBackboneTransfersWeights) {
  TempDir dir;
  auto donor = make_model(Variant::kSSpatial, small("resnet-mini"), 31);
  save_checkpoint(*donor, dir / "donor.ckpt", {});
  auto fresh = make_model(Variant::kSOptical, small("resnet-mini"), 32);
  const int loaded = load_pretrained_backbone(*fresh, dir / "donor.ckpt");
  EXPECT_GT(loaded, 0);
  const auto& a = dynamic_cast<BranchModel&>(*donor);
  const auto& b = dynamic_cast<BranchModel&>(*fresh);
  const auto img = fx::texture(32, 32, 33);
  EXPECT_EQ(a.encode(img).values, b.encode(img).values);

  auto other = make_model(Variant::kSSpatial, small("resnet50", 32), 34);
  EXPECT_THROW(load_pretrained_backbone(*other, dir / "donor.ckpt"), Error);
}

TEST(Checkpoint, GraphExportIsJson) {
  TempDir dir;
  auto model = make_model(Variant::kFFAdd, small(), 41);
  export_graph(*model, dir / "g.json");
  const auto bytes = read_bytes(dir / "g.json");
  const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
  EXPECT_TRUE(j.is_object());
  EXPECT_FALSE(j.empty());
}

TEST(Variants, NamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("S_temporal"), Error);
}
