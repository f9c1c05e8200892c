#include "aigvdet/image.hpp"

#include <atomic>
#include <fstream>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "aigvdet/error.hpp"

namespace aigvdet {

RgbImage::RgbImage(int width, int height) : mat_(height, width, CV_8UC3, cv::Scalar::all(0)) {}

RgbImage::RgbImage(cv::Mat rgb) {
  require(rgb.empty() || rgb.type() == CV_8UC3, ErrorCode::kShape, "RgbImage requires CV_8UC3");
  mat_ = rgb.isContinuous() ? std::move(rgb) : rgb.clone();
}

bool operator==(const RgbImage& a, const RgbImage& b) {
  if (a.width() != b.width() || a.height() != b.height()) return false;
  if (a.empty()) return true;
  return cv::norm(a.mat_, b.mat_, cv::NORM_INF) == 0.0;
}

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  cv::Mat bgr;
  cv::cvtColor(img.mat(), bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> out;
  require(cv::imencode(".png", bgr, out), ErrorCode::kEncode, "PNG encode failed");
  return out;
}

std::vector<std::uint8_t> encode_jpeg(const RgbImage& img, int quality) {
  require(quality >= 1 && quality <= 100, ErrorCode::kInvalidArgument,
          "JPEG quality must be in [1,100], got " + std::to_string(quality));
  cv::Mat bgr;
  cv::cvtColor(img.mat(), bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> out;
  const std::vector<int> params{cv::IMWRITE_JPEG_QUALITY, quality};
  require(cv::imencode(".jpg", bgr, out, params), ErrorCode::kEncode, "JPEG encode failed");
  return out;
}

RgbImage decode_image(const std::vector<std::uint8_t>& bytes) {
  cv::Mat bgr = cv::imdecode(bytes, cv::IMREAD_COLOR);
  require(!bgr.empty(), ErrorCode::kDecode, "image decode failed");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return RgbImage(std::move(rgb));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

RgbImage read_image(const std::filesystem::path& path) { return decode_image(read_bytes(path)); }

void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  static std::atomic<unsigned> counter{0};
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + "_" +
         std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

int max_abs_diff(const RgbImage& a, const RgbImage& b) {
  require(a.width() == b.width() && a.height() == b.height(), ErrorCode::kShape,
          "max_abs_diff: shape mismatch");
  if (a.empty()) return 0;
  return static_cast<int>(cv::norm(a.mat(), b.mat(), cv::NORM_INF));
}

}  // namespace aigvdet
