#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "aigvdet/error.hpp"
#include "aigvdet/evaluate.hpp"
#include "aigvdet/preprocess.hpp"
#include "aigvdet/rng.hpp"
#include "aigvdet/toy_corpus.hpp"
#include "aigvdet/video_io.hpp"
#include "test_support.hpp"

using namespace aigvdet;
using aigvdet::fx::TempDir;

namespace {

double pairwise_auc(const std::vector<std::pair<double, Label>>& s) {
  double wins = 0.0, pairs = 0.0;
  for (const auto& g : s)
    for (const auto& r : s)
      if (g.second == Label::kGenerated && r.second == Label::kReal) {
        pairs += 1.0;
        wins += g.first > r.first ? 1.0 : g.first == r.first ? 0.5 : 0.0;
      }
  return wins / pairs;
}

ScoredVideo scored(const std::string& id, Label label, const std::string& generator, GenType type, double p,
                   double threshold = 0.1) {
  ScoredVideo v;
  v.record.id = id;
  v.record.label = label;
  v.record.generator = generator;
  v.record.gen_type = type;
  v.verdict.video_id = id;
  v.verdict.p_video = p;
  v.verdict.threshold = threshold;
  v.verdict.decision = decide(p, threshold);
  return v;
}

std::vector<ScoredVideo> synthetic_test_set(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ScoredVideo> out;
  const std::vector<std::pair<std::string, GenType>> gens = {
      {"Pika", GenType::kT2V}, {"Emu", GenType::kT2V}, {"NeverEnds", GenType::kI2V}};
  for (const auto& [name, type] : gens)
    for (int i = 0; i < 8; ++i)
      out.push_back(scored(name + std::to_string(i), Label::kGenerated, name, type, uniform01(rng)));
  for (int i = 0; i < 30; ++i) out.push_back(scored("real" + std::to_string(i), Label::kReal, "none", GenType::kNone, 0.3 * uniform01(rng)));
  return out;
}

std::filesystem::path write_clip(const TempDir& dir, const std::string& name, int w, int h, int frames) {
  const auto path = dir / (name + ".mp4");
  write_video(path, make_toy_clip(false, false, w, h, frames, 11), {VideoCodec::kH264Lossless, 0, 25.0});
  return path;
}

VideoRecord record_at(const std::filesystem::path& path, int w, int h) {
  VideoRecord r;
  r.id = path.stem().string();
  r.path = path;
  r.width = w;
  r.height = h;
  return r;
}

std::vector<RgbImage> all_frames(const std::filesystem::path& path) {
  const auto info = probe_video(path);
  std::vector<int> idx(static_cast<std::size_t>(info.frame_count));
  for (int i = 0; i < info.frame_count; ++i) idx[static_cast<std::size_t>(i)] = i;
  return decode_frames(path, idx).frames;
}

}  // namespace

TEST(Accuracy, WorkedExamples) {
  using D = Decision;
  using L = Label;
  EXPECT_EQ(accuracy({{D::kGenerated, L::kGenerated}, {D::kReal, L::kReal}}), 1.0);
  EXPECT_EQ(accuracy({{D::kGenerated, L::kGenerated}, {D::kReal, L::kReal}, {D::kReal, L::kReal}, {D::kReal, L::kGenerated}}),
            0.75);
  EXPECT_EQ(accuracy({{D::kGenerated, L::kGenerated}, {D::kGenerated, L::kReal}}), 0.5);
  EXPECT_THROW(accuracy({}), Error);
}

TEST(Auc, SeparatedAndAllTied) {
  EXPECT_EQ(auc({{0.9, Label::kGenerated}, {0.8, Label::kGenerated}, {0.1, Label::kReal}}), 1.0);
  EXPECT_EQ(auc({{0.4, Label::kGenerated}, {0.4, Label::kReal}, {0.4, Label::kReal}}), 0.5);
  EXPECT_EQ(auc({{0.1, Label::kGenerated}, {0.9, Label::kReal}}), 0.0);
}

TEST(Auc, SingleClassIsInsufficientData) {
  try {
    auc({{0.3, Label::kGenerated}, {0.4, Label::kGenerated}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientData);
  }
}

TEST(Auc, MatchesPairwiseOracleOnRandomScores) {
  Rng rng(derive_seed(0, "auc-oracle"));
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::pair<double, Label>> s;
    const bool coarse = trial % 2 == 0;
    for (int i = 0; i < 20; ++i) {
      const double score = coarse ? static_cast<double>(uniform_int(rng, 0, 5)) / 5.0 : uniform01(rng);
      s.emplace_back(score, i < 2 ? (i == 0 ? Label::kGenerated : Label::kReal)
                                  : (uniform01(rng) < 0.5 ? Label::kGenerated : Label::kReal));
    }
    const double a = auc(s);
    ASSERT_NEAR(a, pairwise_auc(s), 1e-12);
    ASSERT_NEAR(roc_staircase_area(s), a, 1e-12);
    ASSERT_GE(a, 0.0);
    ASSERT_LE(a, 1.0);
    // Any strictly increasing transform of the scores leaves AUC unchanged.
    auto t = s;
    for (auto& p : t) p.first = std::exp(4.0 * p.first);
    ASSERT_NEAR(auc(t), a, 1e-12);
  }
}

TEST(Subsets, PerfectVerdictsGiveUnitMetrics) {
  std::vector<ScoredVideo> v;
  for (int i = 0; i < 4; ++i) {
    v.push_back(scored("g" + std::to_string(i), Label::kGenerated, "Pika", GenType::kT2V, 0.9));
    v.push_back(scored("r" + std::to_string(i), Label::kReal, "none", GenType::kNone, 0.01));
  }
  const auto reports = evaluate_subsets(v, {}, 0);
  ASSERT_GE(reports.size(), 1u);
  EXPECT_EQ(reports[0].subset, "Pika");
  EXPECT_EQ(reports[0].acc, 1.0);
  EXPECT_EQ(reports[0].auc, 1.0);
  EXPECT_EQ(reports[0].n_generated, 4);
  EXPECT_EQ(reports[0].n_real, 4);
}

TEST(Subsets, AveragesAreMeansOfTheirRows) {
  const auto reports = evaluate_subsets(synthetic_test_set(5), {}, 3);
  for (GenType type : {GenType::kT2V, GenType::kI2V}) {
    double acc = 0.0, auc_sum = 0.0;
    int k = 0;
    const EvalReport* avg = nullptr;
    for (const auto& r : reports) {
      if (r.gen_type != type) continue;
      if (r.is_average) {
        avg = &r;
        continue;
      }
      acc += r.acc;
      auc_sum += r.auc;
      ++k;
    }
    ASSERT_NE(avg, nullptr);
    ASSERT_GT(k, 0);
    EXPECT_NEAR(avg->acc, acc / k, 1e-12);
    EXPECT_NEAR(avg->auc, auc_sum / k, 1e-12);
  }
}

TEST(Subsets, BalancedPairingAndSubsetFilter) {
  const auto all = synthetic_test_set(6);
  const auto only = evaluate_subsets(all, {"Emu"}, 0);
  ASSERT_EQ(only.size(), 2u);  // Emu plus "Average T2V"
  EXPECT_EQ(only[0].subset, "Emu");
  EXPECT_EQ(only[0].n_generated, 8);
  EXPECT_EQ(only[0].n_real, 8);
  EXPECT_THROW(evaluate_subsets(all, {"Sora"}, 0), Error);
}

TEST(Subsets, RealPartnersFollowBaseIds) {
  auto a = synthetic_test_set(7);
  auto b = a;
  for (auto& v : b) v.record.id += "@crf23";
  EXPECT_EQ(pick_real_partners(a, "Pika", 8, 4), pick_real_partners(b, "Pika", 8, 4));
  EXPECT_EQ(pick_real_partners(a, "Pika", 8, 4), pick_real_partners(a, "Pika", 8, 4));
  EXPECT_EQ(base_video_id("clip@crf23"), "clip");
  EXPECT_EQ(base_video_id("clip"), "clip");
}

TEST(Report, CsvShapeAndAllRow) {
  auto reports = evaluate_subsets(synthetic_test_set(8), {}, 0);
  reports.push_back(evaluate_all(synthetic_test_set(8), "All"));
  const auto csv = report_csv(reports);
  EXPECT_EQ(csv.rfind("subset,n_gen,n_real,acc,auc\n", 0), 0u);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  EXPECT_EQ(lines, reports.size() + 1);
  EXPECT_EQ(reports.back().n_generated, 24);
  EXPECT_EQ(reports.back().n_real, 30);
}

TEST(Recompress, CrfZeroIsAByteIdenticalCopy) {
  TempDir dir;
  const auto src = write_clip(dir, "clip", 64, 48, 6);
  const auto out = recompress_crf(record_at(src, 64, 48), 0, dir / "out");
  EXPECT_EQ(out.id, "clip@crf0");
  EXPECT_EQ(read_bytes(out.path), read_bytes(src));
  const auto a = all_frames(src), b = all_frames(out.path);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Recompress, HigherCrfGivesSmallerFiles) {
  TempDir dir;
  const auto src = write_clip(dir, "clip", 96, 96, 12);
  std::uintmax_t previous = std::numeric_limits<std::uintmax_t>::max();
  for (int crf : {18, 23, 28}) {
    const auto out = recompress_crf(record_at(src, 96, 96), crf, dir / "out");
    EXPECT_EQ(out.id, "clip@crf" + std::to_string(crf));
    const auto size = std::filesystem::file_size(out.path);
    EXPECT_LT(size, previous) << "crf " << crf;
    previous = size;
    EXPECT_EQ(probe_video(out.path).frame_count, 12);
  }
}

TEST(Recompress, OddSizesAreTrimmedAndRangeIsChecked) {
  TempDir dir;
  const auto src = write_clip(dir, "odd", 63, 47, 4);
  const auto out = recompress_crf(record_at(src, 63, 47), 23, dir / "out");
  EXPECT_EQ(out.width, 62);
  EXPECT_EQ(out.height, 46);
  const auto info = probe_video(out.path);
  EXPECT_EQ(info.width, 62);
  EXPECT_EQ(info.height, 46);
  EXPECT_THROW(recompress_crf(record_at(src, 63, 47), 60, dir / "out"), Error);
  EXPECT_THROW(recompress_crf(record_at(src, 63, 47), -1, dir / "out"), Error);
}

TEST(Robustness, CsvAndPlotArtifacts) {
  TempDir dir;
  std::vector<RobustnessPoint> points;
  for (const char* s : {"Pika", "Emu"})
    for (int crf : {0, 18, 23, 28}) points.push_back({s, crf, 0.9 - crf / 100.0, 0.95 - crf / 200.0});
  const auto csv = robustness_csv(points);
  EXPECT_EQ(csv.rfind("subset,crf,acc,auc\n", 0), 0u);
  EXPECT_NE(csv.find("Emu,28,0.620000,0.810000"), std::string::npos);
  plot_robustness(points, dir / "plot.png");
  const auto img = read_image(dir / "plot.png");
  EXPECT_GT(img.width(), 100);
  EXPECT_THROW(plot_robustness({}, dir / "empty.png"), Error);
}
