#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "aigvdet/image.hpp"

namespace aigvdet {

struct VideoInfo {
  int width = 0;
  int height = 0;
  double fps = 0.0;
  int frame_count = 0;  // counted by decoding, never taken from container metadata
};

VideoInfo probe_video(const std::filesystem::path& path);

struct DecodedFrames {
  std::vector<RgbImage> frames;
  std::vector<int> indices;  // indices actually delivered, a prefix of the request
  double fps = 0.0;
};

// Decodes the frames at `indices` (strictly increasing). Requests past the end of
// the stream are dropped with a warning. Throws kDecode when the file cannot be
// opened or decoded.
DecodedFrames decode_frames(const std::filesystem::path& path, const std::vector<int>& indices);

enum class VideoCodec {
  kH264Crf,       // libx264, yuv420p, constant rate factor
  kH264Lossless,  // libx264rgb qp 0, bit-exact RGB
  kGif,
};

struct EncoderSettings {
  VideoCodec codec = VideoCodec::kH264Crf;
  int crf = 23;
  double fps = 25.0;
};

// Single-threaded encoder so identical input produces identical bytes.
class VideoWriter {
 public:
  VideoWriter(const std::filesystem::path& path, int width, int height, const EncoderSettings& settings);
  ~VideoWriter();
  VideoWriter(const VideoWriter&) = delete;
  VideoWriter& operator=(const VideoWriter&) = delete;

  void write(const RgbImage& frame);
  // Flushes the encoder and writes the trailer. Called by the destructor if needed.
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

void write_video(const std::filesystem::path& path, const std::vector<RgbImage>& frames, const EncoderSettings& settings);

}  // namespace aigvdet
