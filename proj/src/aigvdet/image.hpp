#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace aigvdet {

// 8-bit, 3-channel image stored in RGB order. Owns its pixels.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height);
  // Takes a CV_8UC3 matrix already in RGB order; deep-copies non-continuous input.
  explicit RgbImage(cv::Mat rgb);

  int width() const { return mat_.cols; }
  int height() const { return mat_.rows; }
  bool empty() const { return mat_.empty(); }

  const cv::Mat& mat() const { return mat_; }
  cv::Mat& mat() { return mat_; }

  std::uint8_t at(int x, int y, int c) const { return mat_.ptr<std::uint8_t>(y)[3 * x + c]; }
  std::uint8_t& at(int x, int y, int c) { return mat_.ptr<std::uint8_t>(y)[3 * x + c]; }

  RgbImage clone() const { return RgbImage(mat_.clone()); }
  std::size_t byte_size() const { return mat_.total() * 3; }

  friend bool operator==(const RgbImage& a, const RgbImage& b);

 private:
  cv::Mat mat_;
};

std::vector<std::uint8_t> encode_png(const RgbImage& img);
std::vector<std::uint8_t> encode_jpeg(const RgbImage& img, int quality);
RgbImage decode_image(const std::vector<std::uint8_t>& bytes);

RgbImage read_image(const std::filesystem::path& path);
// Writes via a temporary file and rename so concurrent readers never see a partial file.
void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

// Largest absolute per-channel difference; images must share a shape.
int max_abs_diff(const RgbImage& a, const RgbImage& b);

}  // namespace aigvdet
