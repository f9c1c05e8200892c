#include <gtest/gtest.h>

#include <fstream>

#include "aigvdet/error.hpp"
#include "aigvdet/preprocess.hpp"
#include "aigvdet/video_io.hpp"
#include "test_support.hpp"

using namespace aigvdet;
using aigvdet::fx::TempDir;

namespace {

std::vector<RgbImage> numbered_frames(int n, int w, int h) {
  std::vector<RgbImage> frames;
  for (int i = 0; i < n; ++i) frames.push_back(fx::texture(w, h, 100 + static_cast<std::uint64_t>(i)));
  return frames;
}

VideoRecord record_at(const std::filesystem::path& path) {
  VideoRecord r;
  r.id = path.stem().string();
  r.path = path;
  return r;
}

}  // namespace

TEST(VideoIo, LosslessRoundTripIsBitExact) {
  TempDir dir;
  const auto frames = numbered_frames(10, 48, 32);
  write_video(dir / "a.mp4", frames, {VideoCodec::kH264Lossless, 0, 25.0});
  const auto info = probe_video(dir / "a.mp4");
  EXPECT_EQ(info.frame_count, 10);
  EXPECT_EQ(info.width, 48);
  EXPECT_EQ(info.height, 32);
  EXPECT_NEAR(info.fps, 25.0, 1e-6);
  const auto decoded = decode_frames(dir / "a.mp4", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  ASSERT_EQ(decoded.frames.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(decoded.frames[static_cast<std::size_t>(i)], frames[static_cast<std::size_t>(i)]) << i;
}

TEST(VideoIo, SelectedIndicesComeBackInOrder) {
  TempDir dir;
  const auto frames = numbered_frames(10, 32, 32);
  write_video(dir / "a.mp4", frames, {VideoCodec::kH264Lossless, 0, 25.0});
  const auto seq = decode_video(record_at(dir / "a.mp4"), {0, 5, 9});
  ASSERT_EQ(seq.size(), 3u);
  EXPECT_EQ(seq.indices, (std::vector<int>{0, 5, 9}));
  EXPECT_EQ(seq.frames[1], frames[5]);
  EXPECT_EQ(seq.frames[2], frames[9]);
  EXPECT_EQ(seq.source_id, "a");
}

TEST(VideoIo, RequestsPastTheEndAreDropped) {
  TempDir dir;
  write_video(dir / "a.mp4", numbered_frames(4, 16, 16), {VideoCodec::kH264Lossless, 0, 25.0});
  const auto decoded = decode_frames(dir / "a.mp4", {1, 3, 7, 20});
  EXPECT_EQ(decoded.indices, (std::vector<int>{1, 3}));
}

TEST(VideoIo, EncodingIsDeterministic) {
  TempDir dir;
  const auto frames = numbered_frames(6, 32, 32);
  write_video(dir / "a.mp4", frames, {VideoCodec::kH264Crf, 23, 25.0});
  write_video(dir / "b.mp4", frames, {VideoCodec::kH264Crf, 23, 25.0});
  EXPECT_EQ(read_bytes(dir / "a.mp4"), read_bytes(dir / "b.mp4"));
}

TEST(VideoIo, GifDecodesToRgbFrames) {
  TempDir dir;
  // GIF frames use the fixed 3-3-2 bit RGB palette (red and green in steps of 36,
  // blue in steps of 85), so flat colors on that grid survive exactly.
  std::vector<RgbImage> frames;
  for (int i = 0; i < 5; ++i) {
    RgbImage f(40, 24);
    f.mat().setTo(cv::Scalar(36 * i, 36 * (7 - i), 85 * (i % 4)));
    frames.push_back(f);
  }
  write_video(dir / "clip.gif", frames, {VideoCodec::kGif, 0, 10.0});
  VideoRecord r = record_at(dir / "clip.gif");
  r.container = Container::kGIF;
  const auto seq = decode_video(r, {0, 1, 2, 3, 4});
  ASSERT_EQ(seq.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    const auto& f = seq.frames[static_cast<std::size_t>(i)];
    EXPECT_EQ(f.width(), 40);
    EXPECT_EQ(f.height(), 24);
    EXPECT_EQ(f, frames[static_cast<std::size_t>(i)]) << i;
  }
}

TEST(VideoIo, CorruptFileIsADecodeError) {
  TempDir dir;
  std::ofstream(dir / "bad.mp4") << "this is not a video container at all";
  try {
    decode_video(record_at(dir / "bad.mp4"), {0, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDecode);
  }
  EXPECT_THROW(probe_video(dir / "missing.mp4"), Error);
}

TEST(VideoIo, TruncatedFileFailsOrYieldsFewerFrames) {
  TempDir dir;
  write_video(dir / "a.mp4", numbered_frames(10, 32, 32), {VideoCodec::kH264Lossless, 0, 25.0});
  auto bytes = read_bytes(dir / "a.mp4");
  bytes.resize(bytes.size() / 3);
  write_bytes_atomic(dir / "cut.mp4", bytes);
  try {
    const auto decoded = decode_frames(dir / "cut.mp4", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    EXPECT_LT(decoded.frames.size(), 10u);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDecode);
  }
}

TEST(VideoIo, WriterRejectsMismatchedFrames) {
  TempDir dir;
  VideoWriter w(dir / "a.mp4", 32, 32, {VideoCodec::kH264Crf, 23, 25.0});
  EXPECT_THROW(w.write(RgbImage(16, 16)), Error);
}
