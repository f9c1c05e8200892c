#include "aigvdet/toy_corpus.hpp"

#include <cmath>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include "aigvdet/error.hpp"
#include "aigvdet/rng.hpp"
#include "aigvdet/video_io.hpp"

namespace aigvdet {
namespace {

constexpr double kPi = 3.14159265358979323846;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Blurred color noise stretched to the full 8-bit range.
cv::Mat make_texture(Rng& rng, int width, int height) {
  cv::Mat noise(height, width, CV_32FC3);
  for (int y = 0; y < height; ++y) {
    auto* row = noise.ptr<float>(y);
    for (int x = 0; x < 3 * width; ++x) row[x] = static_cast<float>(uniform01(rng));
  }
  cv::GaussianBlur(noise, noise, cv::Size(0, 0), 2.0);
  cv::normalize(noise, noise, 0.0, 255.0, cv::NORM_MINMAX);
  cv::Mat out;
  noise.convertTo(out, CV_8UC3);
  return out;
}

// Faint period-2 pattern of the kind transposed-convolution upsamplers leave behind.
constexpr int kCheckerAmplitude = 4;

void add_checkerboard(cv::Mat& img, int amplitude) {
  for (int y = 0; y < img.rows; ++y) {
    auto* row = img.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.cols; ++x) {
      const int d = ((x + y) % 2 == 0) ? amplitude : -amplitude;
      for (int c = 0; c < 3; ++c) row[3 * x + c] = cv::saturate_cast<std::uint8_t>(row[3 * x + c] + d);
    }
  }
}

cv::Mat affine_at(double t, cv::Point2d shift, double theta, double zoom, cv::Point2d center) {
  cv::Mat m = cv::getRotationMatrix2D(center, theta * t, 1.0 + zoom * t);
  m.at<double>(0, 2) += shift.x;
  m.at<double>(1, 2) += shift.y;
  return m;
}

}  // namespace

std::vector<RgbImage> make_toy_clip(bool generated, bool image_to_video, int width, int height, int frames,
                                    std::uint64_t seed) {
  require(width >= 16 && height >= 16 && frames >= 2, ErrorCode::kInvalidArgument, "toy clip too small");
  Rng rng(seed);
  const int margin = std::max(width, height);
  const cv::Mat texture = make_texture(rng, width + 2 * margin, height + 2 * margin);
  // Speed stays away from zero: per-frame flow normalization would otherwise blow
  // estimator noise on a nearly static clip up to full saturation. The heading turns
  // slowly, so one clip sweeps a range of flow directions.
  const double speed = uniform(rng, 0.8, 1.5), heading = uniform(rng, 0.0, 2.0 * kPi);
  const double turn = uniform(rng, -0.1, 0.1);
  const double theta = uniform(rng, -0.5, 0.5), zoom = uniform(rng, -0.005, 0.005);
  const cv::Point2d center(texture.cols / 2.0, texture.rows / 2.0);
  const int block = image_to_video ? 16 : 8;
  const double jitter = image_to_video ? 2.0 : 3.0;

  std::vector<RgbImage> out;
  cv::Point2d shift(0.0, 0.0);
  for (int t = 0; t < frames; ++t) {
    if (t > 0) {
      const double h = heading + turn * (t - 1);
      shift += cv::Point2d(speed * std::cos(h), speed * std::sin(h));
    }
    cv::Mat warped;
    cv::Mat m = affine_at(t, shift, theta, zoom, center);
    m.at<double>(0, 2) -= margin;
    m.at<double>(1, 2) -= margin;
    if (!generated || (image_to_video && t == 0)) {
      cv::warpAffine(texture, warped, m, cv::Size(width, height), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
      out.emplace_back(warped);
      continue;
    }
    warped = cv::Mat(height, width, CV_8UC3);
    for (int by = 0; by < height; by += block) {
      for (int bx = 0; bx < width; bx += block) {
        cv::Mat mb = m.clone();
        mb.at<double>(0, 2) += uniform(rng, -jitter, jitter);
        mb.at<double>(1, 2) += uniform(rng, -jitter, jitter);
        cv::Mat full;
        cv::warpAffine(texture, full, mb, cv::Size(width, height), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
        const cv::Rect roi(bx, by, std::min(block, width - bx), std::min(block, height - by));
        full(roi).copyTo(warped(roi));
      }
    }
    add_checkerboard(warped, kCheckerAmplitude);
    out.emplace_back(warped);
  }
  return out;
}

std::vector<VideoRecord> make_toy_corpus(const std::filesystem::path& out_dir, const ToyCorpusOptions& opts) {
  require(opts.n_real >= 1 && opts.n_generated >= 2, ErrorCode::kInvalidArgument,
          "toy corpus needs at least one real and two generated clips");
  const auto video_dir = out_dir / "videos";
  std::filesystem::create_directories(video_dir);
  std::vector<VideoRecord> records;
  auto emit = [&](const std::string& id, bool generated, bool i2v, const std::string& generator) {
    const auto frames = make_toy_clip(generated, i2v, opts.width, opts.height, opts.frames, derive_seed(opts.seed, id));
    VideoRecord r;
    r.id = id;
    r.path = video_dir / (id + ".mp4");
    r.label = generated ? Label::kGenerated : Label::kReal;
    r.gen_type = generated ? (i2v ? GenType::kI2V : GenType::kT2V) : GenType::kNone;
    r.generator = generator;
    r.container = Container::kMP4;
    r.width = opts.width;
    r.height = opts.height;
    write_video(r.path, frames, EncoderSettings{VideoCodec::kH264Lossless, 0, opts.fps});
    records.push_back(std::move(r));
  };
  for (int i = 0; i < opts.n_real; ++i) emit(fmt::format("real_{:03d}", i), false, false, "none");
  const int n_t2v = (opts.n_generated + 1) / 2;
  for (int i = 0; i < n_t2v; ++i) emit(fmt::format("t2v_{:03d}", i), true, false, "JitterT2V");
  for (int i = 0; i < opts.n_generated - n_t2v; ++i) emit(fmt::format("i2v_{:03d}", i), true, true, "JitterI2V");
  save_manifest(records, out_dir / "manifest.csv");
  return records;
}

}  // namespace aigvdet
