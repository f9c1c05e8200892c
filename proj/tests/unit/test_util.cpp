#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <stdexcept>

#include "aigvdet/csv.hpp"
#include "aigvdet/error.hpp"
#include "aigvdet/image.hpp"
#include "aigvdet/parallel.hpp"
#include "aigvdet/rng.hpp"
#include "test_support.hpp"

using namespace aigvdet;
using aigvdet::fx::TempDir;

TEST(Rng, DeriveSeedIsAPureFunctionOfItsArguments) {
  EXPECT_EQ(derive_seed(7, "clip", 3), derive_seed(7, "clip", 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t base : {0ULL, 1ULL})
    for (const char* key : {"a", "b"})
      for (std::uint64_t i = 0; i < 4; ++i) seen.insert(derive_seed(base, key, i));
  EXPECT_EQ(seen.size(), 16u);
}

TEST(Rng, UniformIntStaysInRangeAndHitsEveryValueEvenly) {
  // One 5%-level test rejects a fair generator 5% of the time, so test the statistic
  // over many seeds: its mean should be near df and its rejection rate near 5%.
  constexpr int kSeeds = 200;
  double chi2_sum = 0.0;
  int rejections = 0;
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(derive_seed(42, "uniform-int", static_cast<std::uint64_t>(s)));
    std::vector<int> counts(21, 0);
    for (int i = 0; i < 21000; ++i) {
      const auto v = uniform_int(rng, 70, 90);
      ASSERT_GE(v, 70);
      ASSERT_LE(v, 90);
      ++counts[static_cast<std::size_t>(v - 70)];
    }
    const double chi2 = fx::chi_square_uniform(counts);
    chi2_sum += chi2;
    rejections += chi2 >= fx::kChi2Crit5pctDf20;
  }
  // Mean of 200 chi-square(20) draws: 20 with sd sqrt(40 / 200) = 0.45.
  EXPECT_NEAR(chi2_sum / kSeeds, 20.0, 4 * 0.45);
  // Binomial(200, 0.05): mean 10, sd 3.1.
  EXPECT_LE(rejections, 10 + 4 * 3.1);
  Rng rng(1);
  EXPECT_EQ(uniform_int(rng, 5, 5), 5);
}

TEST(Rng, Uniform01IsHalfOpen) {
  Rng rng(3);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform01(rng);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_LT(lo, 0.01);
  EXPECT_GT(hi, 0.99);
}

TEST(Csv, EscapeAndSplitRoundTrip) {
  const std::vector<std::string> fields = {"plain", "with,comma", "with \"quote\"", "", "tail"};
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) line += (i ? "," : "") + csv::escape(fields[i]);
  std::vector<std::string> parsed;
  ASSERT_TRUE(csv::split_line(line, parsed));
  EXPECT_EQ(parsed, fields);
}

TEST(Csv, UnterminatedQuoteIsReported) {
  std::vector<std::string> parsed;
  EXPECT_FALSE(csv::split_line("a,\"b", parsed));
  EXPECT_TRUE(csv::split_line("a,b\r", parsed));
  EXPECT_EQ(parsed.back(), "b");
}

TEST(Parallel, EverySlotIsVisitedOnce) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Parallel, LowestFailingIndexIsRethrown) {
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 7 || i == 31) throw std::runtime_error(std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}

TEST(Image, PngRoundTripIsExact) {
  const auto img = fx::texture(33, 17, 5);
  EXPECT_EQ(decode_image(encode_png(img)), img);
}

TEST(Image, AtomicWriteThenReadBack) {
  TempDir dir;
  const std::vector<std::uint8_t> bytes = {1, 2, 3, 250};
  write_bytes_atomic(dir / "sub/x.bin", bytes);
  EXPECT_EQ(read_bytes(dir / "sub/x.bin"), bytes);
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "sub")) ++entries;
  EXPECT_EQ(entries, 1u);
}

TEST(Image, MaxAbsDiffRejectsShapeMismatch) {
  const RgbImage a(4, 4), b(5, 4);
  EXPECT_THROW(max_abs_diff(a, b), Error);
  auto c = a.clone();
  c.at(1, 2, 0) = 9;
  EXPECT_EQ(max_abs_diff(a, c), 9);
}

TEST(Image, MissingFileIsAnIoError) {
  try {
    read_image("/nonexistent/aigvdet.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}
