#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "aigvdet/dataset.hpp"
#include "aigvdet/image.hpp"

namespace aigvdet {

// Synthetic two-class corpus. Real clips move a smooth random texture under one
// slowly varying affine transform. Generated clips cut the same kind of texture into
// blocks that each jitter independently from frame to frame, which leaves block seams
// in every frame and rough, discontinuous flow; their frames also carry a faint
// checkerboard like the one left by transposed-convolution upsampling. Half of the
// generated clips come from
// "JitterT2V" (small blocks, jitter from the first frame) and half from "JitterI2V"
// (larger blocks, clean first frame).
struct ToyCorpusOptions {
  int n_real = 40;
  int n_generated = 40;
  int width = 64;
  int height = 64;
  int frames = 30;
  double fps = 25.0;
  std::uint64_t seed = 0;
};

std::vector<RgbImage> make_toy_clip(bool generated, bool image_to_video, int width, int height, int frames,
                                    std::uint64_t seed);

// Writes <out_dir>/videos/<id>.mp4 (lossless H.264 RGB) and <out_dir>/manifest.csv.
std::vector<VideoRecord> make_toy_corpus(const std::filesystem::path& out_dir, const ToyCorpusOptions& opts);

}  // namespace aigvdet
