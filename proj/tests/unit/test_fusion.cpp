#include <gtest/gtest.h>

#include <cmath>

#include "aigvdet/error.hpp"
#include "aigvdet/fusion.hpp"
#include "aigvdet/rng.hpp"

using namespace aigvdet;

TEST(FuseFrame, WorkedExamples) {
  EXPECT_NEAR(fuse_frame(0.8, 0.4, 0.5), 0.6, 1e-15);
  EXPECT_NEAR(fuse_frame(1.0, 0.0, 0.25), 0.25, 1e-15);
  for (double alpha : {0.01, 0.3, 0.5, 0.99}) EXPECT_NEAR(fuse_frame(0.37, 0.37, alpha), 0.37, 1e-15);
}

TEST(FuseFrame, ConvexCombinationProperty) {
  Rng rng(derive_seed(0, "fusion-props"));
  for (int k = 0; k < 10000; ++k) {
    const double ps = uniform01(rng), pf = uniform01(rng);
    const double alpha = 0.001 + 0.998 * uniform01(rng);
    const double f = fuse_frame(ps, pf, alpha);
    ASSERT_GE(f, std::min(ps, pf) - 1e-15);
    ASSERT_LE(f, std::max(ps, pf) + 1e-15);
    ASSERT_NEAR(f, alpha * ps + (1 - alpha) * pf, 1e-15);
  }
}

TEST(FuseFrame, RejectsOutOfRangeArguments) {
  EXPECT_THROW(fuse_frame(0.5, 0.5, 0.0), Error);
  EXPECT_THROW(fuse_frame(0.5, 0.5, 1.0), Error);
  EXPECT_THROW(fuse_frame(1.5, 0.5, 0.5), Error);
  EXPECT_THROW(fuse_frame(0.5, -0.1, 0.5), Error);
  EXPECT_THROW(fuse_frame(std::nan(""), 0.5, 0.5), Error);
}

TEST(Aggregate, MeanOfFusedScores) {
  std::vector<FramePrediction> frames(3);
  frames[0].p_fused = 0.2;
  frames[1].p_fused = 0.4;
  frames[2].p_fused = 0.6;
  EXPECT_NEAR(aggregate_video(frames), 0.4, 1e-15);
  for (auto& f : frames) f.p_fused = 0.73;
  EXPECT_NEAR(aggregate_video(frames), 0.73, 1e-15);
  EXPECT_THROW(aggregate_video({}), Error);
}

TEST(Aggregate, MatchesNaiveSumOverNinetyFourFrames) {
  Rng rng(derive_seed(0, "aggregate-oracle"));
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<FramePrediction> frames(94);
    double sum = 0.0;
    for (auto& f : frames) {
      f.p_fused = uniform01(rng);
      sum += f.p_fused;
    }
    ASSERT_NEAR(aggregate_video(frames), sum / 94.0, 1e-12);
  }
}

TEST(Decide, BoundaryBelongsToGenerated) {
  EXPECT_EQ(decide(0.09, 0.1), Decision::kReal);
  EXPECT_EQ(decide(0.1, 0.1), Decision::kGenerated);
  EXPECT_EQ(decide(0.95, 0.1), Decision::kGenerated);
  EXPECT_EQ(decide(std::nextafter(0.1, 0.0), 0.1), Decision::kReal);
}

TEST(FuseFrames, PairsByIndexAndRejectsLengthMismatch) {
  const auto frames = fuse_frames({0.2, 0.8}, {0.4, 0.0}, 0.5);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[1].index, 1);
  EXPECT_NEAR(frames[0].p_fused, 0.3, 1e-15);
  EXPECT_NEAR(frames[1].p_fused, 0.4, 1e-15);
  EXPECT_EQ(*frames[0].p_spatial, 0.2);
  EXPECT_EQ(*frames[0].p_flow, 0.4);
  EXPECT_THROW(fuse_frames({0.2, 0.8}, {0.4}, 0.5), Error);
}

TEST(Verdict, FusingThenAveragingEqualsFusingTheMeans) {
  Rng rng(derive_seed(0, "verdict-linearity"));
  for (int trial = 0; trial < 200; ++trial) {
    const int n = static_cast<int>(uniform_int(rng, 1, 100));
    const double alpha = 0.05 + 0.9 * uniform01(rng);
    std::vector<double> ps(static_cast<std::size_t>(n)), pf(static_cast<std::size_t>(n));
    double ms = 0.0, mf = 0.0;
    for (int i = 0; i < n; ++i) {
      ms += ps[static_cast<std::size_t>(i)] = uniform01(rng);
      mf += pf[static_cast<std::size_t>(i)] = uniform01(rng);
    }
    const auto v = make_verdict("v", fuse_frames(ps, pf, alpha), alpha, 0.1);
    ASSERT_NEAR(v.p_video, alpha * ms / n + (1 - alpha) * mf / n, 1e-12);
    ASSERT_EQ(v.decision, decide(v.p_video, 0.1));
  }
}

TEST(Verdict, JsonRoundTrip) {
  auto frames = fuse_frames({0.25, 0.5}, {0.75, 1.0}, 0.5);
  FramePrediction single;
  single.index = 2;
  single.p_spatial = 0.125;
  single.p_fused = 0.125;
  frames.push_back(single);
  const auto v = make_verdict("clip-7", frames, 0.5, 0.1);
  const auto back = verdict_from_json(nlohmann::json::parse(to_json(v).dump()));
  EXPECT_EQ(back.video_id, "clip-7");
  EXPECT_EQ(back.p_video, v.p_video);
  EXPECT_EQ(back.decision, v.decision);
  EXPECT_EQ(back.alpha, 0.5);
  EXPECT_EQ(back.threshold, 0.1);
  ASSERT_EQ(back.frames.size(), 3u);
  EXPECT_FALSE(back.frames[2].p_flow.has_value());
  EXPECT_EQ(*back.frames[2].p_spatial, 0.125);
  EXPECT_EQ(to_json(back).dump(), to_json(v).dump());
}
