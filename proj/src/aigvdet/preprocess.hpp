#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aigvdet/dataset.hpp"
#include "aigvdet/image.hpp"

namespace aigvdet {

struct FrameSequence {
  std::vector<RgbImage> frames;
  std::vector<int> indices;  // source frame index of each entry
  std::string source_id;
  double fps = 0.0;

  std::size_t size() const { return frames.size(); }
};

// All frames share one width/height; throws kShape otherwise.
void check_uniform_shape(const FrameSequence& seq);

FrameSequence decode_video(const VideoRecord& record, const std::vector<int>& indices);

// Drops floor(H * bottom_fraction) rows from the bottom of every frame.
FrameSequence crop_watermark(const FrameSequence& seq, double bottom_fraction);

// Quality used for frame `frame_index` of `source_id`; uniform over [lo, hi].
int equalization_quality(std::uint64_t seed, const std::string& source_id, int frame_index, int lo, int hi);
// Single JPEG round trip at `quality`.
RgbImage jpeg_roundtrip(const RgbImage& img, int quality);
// Recompresses each frame once at its equalization_quality.
FrameSequence equalize_jpeg(const FrameSequence& seq, int lo, int hi, std::uint64_t seed);

enum class CropMode { kRandom, kCenter };
CropMode parse_crop_mode(const std::string& s);

struct CropPolicy {
  int size = 448;
  CropMode mode = CropMode::kCenter;
};

// Images whose shorter side is below `size` are first upscaled (aspect preserved) so
// the shorter side equals `size`.
RgbImage crop(const RgbImage& image, const CropPolicy& policy, std::uint64_t seed);

enum class AugmentSelection { kPickOne, kApplyAll };
AugmentSelection parse_augment_selection(const std::string& s);

struct AugmentationConfig {
  double apply_fraction = 0.10;
  double blur_sigma = 0.5;
  int jpeg_quality = 75;
  bool allow_flip = true;
  AugmentSelection selection = AugmentSelection::kPickOne;
  // Restricts the pool to horizontal flips (flow maps, where blur/JPEG would
  // distort the color encoding).
  bool flip_only = false;
};

void validate(const AugmentationConfig& cfg);

enum AugmentOp : unsigned { kAugBlur = 1u, kAugJpeg = 2u, kAugFlip = 4u };

struct AugmentResult {
  RgbImage image;
  unsigned applied = 0;  // AugmentOp bits
};

AugmentResult augment(const RgbImage& image, const AugmentationConfig& cfg, std::uint64_t seed);

RgbImage gaussian_blur(const RgbImage& image, double sigma);
RgbImage flip_horizontal(const RgbImage& image);

}  // namespace aigvdet
