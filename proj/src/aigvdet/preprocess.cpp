#include "aigvdet/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include "aigvdet/error.hpp"
#include "aigvdet/rng.hpp"
#include "aigvdet/video_io.hpp"

namespace aigvdet {

void check_uniform_shape(const FrameSequence& seq) {
  for (const auto& f : seq.frames) {
    require(f.width() == seq.frames.front().width() && f.height() == seq.frames.front().height(), ErrorCode::kShape,
            fmt::format("sequence '{}' has frames of differing size", seq.source_id));
  }
}

FrameSequence decode_video(const VideoRecord& record, const std::vector<int>& indices) {
  auto decoded = decode_frames(record.path, indices);
  FrameSequence seq;
  seq.frames = std::move(decoded.frames);
  seq.indices = std::move(decoded.indices);
  seq.fps = decoded.fps;
  seq.source_id = record.id;
  check_uniform_shape(seq);
  return seq;
}

FrameSequence crop_watermark(const FrameSequence& seq, double bottom_fraction) {
  require(bottom_fraction >= 0.0 && bottom_fraction < 1.0, ErrorCode::kInvalidArgument,
          fmt::format("watermark bottom_fraction must be in [0,1), got {}", bottom_fraction));
  FrameSequence out = seq;
  for (auto& f : out.frames) {
    const int drop = static_cast<int>(std::floor(f.height() * bottom_fraction));
    if (drop == 0) continue;
    f = RgbImage(f.mat()(cv::Rect(0, 0, f.width(), f.height() - drop)).clone());
  }
  return out;
}

int equalization_quality(std::uint64_t seed, const std::string& source_id, int frame_index, int lo, int hi) {
  require(1 <= lo && lo <= hi && hi <= 100, ErrorCode::kInvalidArgument,
          fmt::format("JPEG quality range must satisfy 1 <= lo <= hi <= 100, got [{}, {}]", lo, hi));
  Rng rng(derive_seed(seed, "jpeg_eq:" + source_id, static_cast<std::uint64_t>(frame_index)));
  return static_cast<int>(uniform_int(rng, lo, hi));
}

RgbImage jpeg_roundtrip(const RgbImage& img, int quality) { return decode_image(encode_jpeg(img, quality)); }

FrameSequence equalize_jpeg(const FrameSequence& seq, int lo, int hi, std::uint64_t seed) {
  FrameSequence out = seq;
  for (std::size_t i = 0; i < out.frames.size(); ++i) {
    const int index = i < seq.indices.size() ? seq.indices[i] : static_cast<int>(i);
    out.frames[i] = jpeg_roundtrip(out.frames[i], equalization_quality(seed, seq.source_id, index, lo, hi));
  }
  return out;
}

CropMode parse_crop_mode(const std::string& s) {
  if (s == "random") return CropMode::kRandom;
  if (s == "center") return CropMode::kCenter;
  fail(ErrorCode::kValidation, "bad crop mode '" + s + "'");
}

RgbImage crop(const RgbImage& image, const CropPolicy& policy, std::uint64_t seed) {
  require(policy.size >= 1, ErrorCode::kInvalidArgument, "crop size must be >= 1");
  require(!image.empty(), ErrorCode::kShape, "cannot crop an empty image");
  const int size = policy.size;
  cv::Mat src = image.mat();
  if (std::min(src.cols, src.rows) < size) {
    const double scale = static_cast<double>(size) / std::min(src.cols, src.rows);
    const int w = std::max(size, static_cast<int>(std::lround(src.cols * scale)));
    const int h = std::max(size, static_cast<int>(std::lround(src.rows * scale)));
    cv::Mat up;
    cv::resize(src, up, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    src = up;
  }
  int x0 = (src.cols - size) / 2;
  int y0 = (src.rows - size) / 2;
  if (policy.mode == CropMode::kRandom) {
    Rng rng(seed);
    x0 = static_cast<int>(uniform_int(rng, 0, src.cols - size));
    y0 = static_cast<int>(uniform_int(rng, 0, src.rows - size));
  }
  return RgbImage(src(cv::Rect(x0, y0, size, size)).clone());
}

AugmentSelection parse_augment_selection(const std::string& s) {
  if (s == "pick_one") return AugmentSelection::kPickOne;
  if (s == "apply_all") return AugmentSelection::kApplyAll;
  fail(ErrorCode::kValidation, "bad augment selection '" + s + "'");
}

void validate(const AugmentationConfig& cfg) {
  require(cfg.apply_fraction >= 0.0 && cfg.apply_fraction <= 1.0, ErrorCode::kValidation,
          "augment.apply_fraction must be in [0,1]");
  require(cfg.jpeg_quality >= 1 && cfg.jpeg_quality <= 100, ErrorCode::kValidation,
          "augment.jpeg_quality must be in [1,100]");
  require(cfg.blur_sigma >= 0.0, ErrorCode::kValidation, "augment.blur_sigma must be >= 0");
}

RgbImage gaussian_blur(const RgbImage& image, double sigma) {
  if (sigma <= 0.0) return image.clone();
  cv::Mat out;
  cv::GaussianBlur(image.mat(), out, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT_101);
  return RgbImage(std::move(out));
}

RgbImage flip_horizontal(const RgbImage& image) {
  cv::Mat out;
  cv::flip(image.mat(), out, 1);
  return RgbImage(std::move(out));
}

AugmentResult augment(const RgbImage& image, const AugmentationConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  AugmentResult result{image.clone(), 0};
  if (!(uniform01(rng) < cfg.apply_fraction)) return result;

  std::vector<AugmentOp> pool;
  if (!cfg.flip_only) {
    pool.push_back(kAugBlur);
    pool.push_back(kAugJpeg);
  }
  if (cfg.allow_flip) pool.push_back(kAugFlip);
  if (pool.empty()) return result;

  unsigned ops = 0;
  if (cfg.selection == AugmentSelection::kPickOne) {
    ops = pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 1))];
  } else {
    for (auto op : pool) ops |= op;
  }
  if (ops & kAugBlur) result.image = gaussian_blur(result.image, cfg.blur_sigma);
  if (ops & kAugJpeg) result.image = jpeg_roundtrip(result.image, cfg.jpeg_quality);
  if (ops & kAugFlip) result.image = flip_horizontal(result.image);
  result.applied = ops;
  return result;
}

}  // namespace aigvdet
