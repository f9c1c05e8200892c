#include "aigvdet/flow.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>
#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/video/tracking.hpp>
#include <zlib.h>

#include "aigvdet/error.hpp"
#include "aigvdet/rng.hpp"

namespace aigvdet {
namespace {

cv::Mat to_gray(const RgbImage& img) {
  cv::Mat gray;
  cv::cvtColor(img.mat(), gray, cv::COLOR_RGB2GRAY);
  return gray;
}

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

FlowField::FlowField(cv::Mat uv) {
  require(uv.empty() || uv.type() == CV_32FC2, ErrorCode::kShape, "FlowField requires CV_32FC2");
  uv_ = uv.isContinuous() ? std::move(uv) : uv.clone();
}

bool FlowField::all_finite() const { return cv::checkRange(uv_, true, nullptr, -1e30, 1e30); }

FlowField FlowField::scaled(float c) const { return FlowField(cv::Mat(uv_ * c)); }

FlowField FlowEstimator::estimate(const RgbImage& a, const RgbImage& b) {
  require(a.width() == b.width() && a.height() == b.height(), ErrorCode::kShape,
          fmt::format("flow frames differ in size: {}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()));
  FlowField field = do_estimate(a, b);
  require(field.width() == a.width() && field.height() == a.height(), ErrorCode::kShape,
          name() + " returned a field of the wrong size");
  require(field.all_finite(), ErrorCode::kNumerical, name() + " returned non-finite flow");
  return field;
}

FlowField FarnebackEstimator::do_estimate(const RgbImage& a, const RgbImage& b) {
  cv::Mat flow;
  cv::calcOpticalFlowFarneback(to_gray(a), to_gray(b), flow, /*pyr_scale=*/0.5, /*levels=*/3, /*winsize=*/15,
                               /*iterations=*/3, /*poly_n=*/5, /*poly_sigma=*/1.2, 0);
  return FlowField(std::move(flow));
}

FlowField GlobalShiftEstimator::do_estimate(const RgbImage& a, const RgbImage& b) {
  cv::Mat ga, gb;
  to_gray(a).convertTo(ga, CV_64F);
  to_gray(b).convertTo(gb, CV_64F);
  cv::Point2d shift(0.0, 0.0);
  if (cv::norm(ga, gb, cv::NORM_INF) > 0.0) shift = cv::phaseCorrelate(ga, gb);
  cv::Mat uv(a.height(), a.width(), CV_32FC2, cv::Scalar(static_cast<float>(shift.x), static_cast<float>(shift.y)));
  return FlowField(std::move(uv));
}

struct RaftOnnxEstimator::Impl {
  cv::dnn::Net net;
  std::vector<std::string> inputs;
};

RaftOnnxEstimator::RaftOnnxEstimator(const std::filesystem::path& model_path) : impl_(std::make_unique<Impl>()) {
  if (model_path.empty()) fail(ErrorCode::kBackendUnavailable, "raft estimator: no model path configured (flow.raft_model)");
  if (!std::filesystem::exists(model_path))
    fail(ErrorCode::kBackendUnavailable, "raft estimator: model file not found: " + model_path.string());
  try {
    impl_->net = cv::dnn::readNetFromONNX(model_path.string());
  } catch (const cv::Exception& e) {
    fail(ErrorCode::kBackendUnavailable, std::string("raft estimator: cannot load model: ") + e.what());
  }
  if (impl_->net.empty()) fail(ErrorCode::kBackendUnavailable, "raft estimator: empty network");
  impl_->net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
  impl_->net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
}

RaftOnnxEstimator::~RaftOnnxEstimator() = default;

FlowField RaftOnnxEstimator::do_estimate(const RgbImage& a, const RgbImage& b) {
  const int pad_h = (8 - a.height() % 8) % 8;
  const int pad_w = (8 - a.width() % 8) % 8;
  auto blob = [&](const RgbImage& img) {
    cv::Mat padded;
    cv::copyMakeBorder(img.mat(), padded, pad_h / 2, pad_h - pad_h / 2, pad_w / 2, pad_w - pad_w / 2, cv::BORDER_REPLICATE);
    return cv::dnn::blobFromImage(padded, 1.0, cv::Size(), cv::Scalar(), /*swapRB=*/false, /*crop=*/false, CV_32F);
  };
  std::vector<cv::Mat> outs;
  try {
    const auto names = impl_->net.getUnconnectedOutLayersNames();
    impl_->net.setInput(blob(a), "image1");
    impl_->net.setInput(blob(b), "image2");
    impl_->net.forward(outs, names);
  } catch (const cv::Exception& e) {
    fail(ErrorCode::kBackendUnavailable, std::string("raft estimator: inference failed: ") + e.what());
  }
  require(!outs.empty(), ErrorCode::kBackendUnavailable, "raft estimator: model produced no output");
  const cv::Mat& out = outs.back();
  require(out.dims == 4 && out.size[1] == 2, ErrorCode::kShape, "raft estimator: expected a 1x2xHxW output");
  const int h = out.size[2];
  const int w = out.size[3];
  cv::Mat u(h, w, CV_32F, const_cast<float*>(out.ptr<float>(0, 0)));
  cv::Mat v(h, w, CV_32F, const_cast<float*>(out.ptr<float>(0, 1)));
  cv::Mat uv;
  cv::merge(std::vector<cv::Mat>{u, v}, uv);
  return FlowField(uv(cv::Rect(pad_w / 2, pad_h / 2, a.width(), a.height())).clone());
}

std::unique_ptr<FlowEstimator> make_flow_estimator(const std::string& name, const std::filesystem::path& raft_model) {
  if (name == "farneback") return std::make_unique<FarnebackEstimator>();
  if (name == "phase_stub") return std::make_unique<GlobalShiftEstimator>();
  if (name == "raft") return std::make_unique<RaftOnnxEstimator>(raft_model);
  fail(ErrorCode::kValidation, "unknown flow estimator '" + name + "'");
}

std::string FlowNormalization::describe() const {
  return kind == Kind::kPerFrameMax ? std::string("per_frame_max") : fmt::format("fixed_max({})", fixed_max);
}

FlowNormalization parse_flow_normalization(const std::string& kind, double fixed_max) {
  if (kind == "per_frame_max") return FlowNormalization::per_frame_max();
  if (kind == "fixed_max") {
    require(fixed_max > 0.0, ErrorCode::kValidation, "flow.fixed_max must be positive");
    return FlowNormalization::fixed(fixed_max);
  }
  fail(ErrorCode::kValidation, "unknown flow normalization '" + kind + "'");
}

RgbImage encode_flow_rgb(const FlowField& field, const FlowNormalization& norm) {
  require(field.all_finite(), ErrorCode::kNumerical, "cannot encode a non-finite flow field");
  double scale = norm.fixed_max;
  if (norm.kind == FlowNormalization::Kind::kPerFrameMax) {
    scale = 0.0;
    for (int y = 0; y < field.height(); ++y)
      for (int x = 0; x < field.width(); ++x) scale = std::max(scale, std::hypot<double>(field.u(x, y), field.v(x, y)));
  }
  scale = std::max(scale, kFlowEpsilon);

  RgbImage out(field.width(), field.height());
  for (int y = 0; y < field.height(); ++y) {
    for (int x = 0; x < field.width(); ++x) {
      const double u = field.u(x, y);
      const double v = field.v(x, y);
      const double sat = std::min(1.0, std::hypot(u, v) / scale);
      double hue = std::atan2(v, u) * 180.0 / M_PI;
      if (hue < 0.0) hue += 360.0;
      const double sector = hue / 60.0;
      const double chroma = sat;
      const double secondary = chroma * (1.0 - std::abs(std::fmod(sector, 2.0) - 1.0));
      double r = 0, g = 0, b = 0;
      switch (static_cast<int>(sector) % 6) {
        case 0: r = chroma, g = secondary; break;
        case 1: r = secondary, g = chroma; break;
        case 2: g = chroma, b = secondary; break;
        case 3: g = secondary, b = chroma; break;
        case 4: r = secondary, b = chroma; break;
        default: r = chroma, b = secondary; break;
      }
      const double m = 1.0 - chroma;
      out.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(255.0 * (r + m)));
      out.at(x, y, 1) = static_cast<std::uint8_t>(std::lround(255.0 * (g + m)));
      out.at(x, y, 2) = static_cast<std::uint8_t>(std::lround(255.0 * (b + m)));
    }
  }
  return out;
}

void write_flo(const std::filesystem::path& path, const FlowField& field) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  const float tag = 202021.25f;
  const std::int32_t w = field.width();
  const std::int32_t h = field.height();
  out.write(reinterpret_cast<const char*>(&tag), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  for (int y = 0; y < h; ++y) out.write(reinterpret_cast<const char*>(field.mat().ptr<float>(y)), 8 * static_cast<std::streamsize>(w));
  require(out.good(), ErrorCode::kIo, "short write to " + path.string());
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open " + path.string());
  float tag = 0;
  std::int32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&tag), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  require(in.good() && tag == 202021.25f, ErrorCode::kParse, path.string() + " is not a .flo file");
  require(w > 0 && h > 0 && w < (1 << 16) && h < (1 << 16), ErrorCode::kParse, path.string() + ": bad dimensions");
  cv::Mat uv(h, w, CV_32FC2);
  for (int y = 0; y < h; ++y) in.read(reinterpret_cast<char*>(uv.ptr<float>(y)), 8 * static_cast<std::streamsize>(w));
  require(in.good(), ErrorCode::kParse, path.string() + ": truncated");
  return FlowField(uv);
}

std::optional<RgbImage> FlowCache::load(const std::string& video_id, int index, const std::string& key) const {
  const auto dir = root_ / video_id;
  const auto meta_path = dir / fmt::format("flow_{}.meta", index);
  const auto png_path = dir / fmt::format("flow_{}.png", index);
  if (!std::filesystem::exists(meta_path) || !std::filesystem::exists(png_path)) return std::nullopt;
  nlohmann::json meta;
  try {
    std::ifstream in(meta_path);
    in >> meta;
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::kCacheCorrupt, "unreadable flow cache meta " + meta_path.string());
  }
  if (meta.value("key", "") != key) return std::nullopt;
  const auto bytes = read_bytes(png_path);
  if (crc32_of(bytes) != meta.value("crc32", 0u)) fail(ErrorCode::kCacheCorrupt, "checksum mismatch in " + png_path.string());
  return decode_image(bytes);
}

void FlowCache::store(const std::string& video_id, int index, const std::string& key, const RgbImage& map,
                      const FlowField* raw) const {
  const auto dir = root_ / video_id;
  const auto bytes = encode_png(map);
  write_bytes_atomic(dir / fmt::format("flow_{}.png", index), bytes);
  if (raw != nullptr && store_raw_) write_flo(dir / fmt::format("flow_{}.flo", index), *raw);
  const nlohmann::json meta = {{"key", key}, {"crc32", crc32_of(bytes)}, {"width", map.width()}, {"height", map.height()}};
  const std::string text = meta.dump();
  write_bytes_atomic(dir / fmt::format("flow_{}.meta", index), std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string flow_cache_key(const std::string& estimator_name, const FlowNormalization& norm,
                           const std::string& frames_fingerprint) {
  return fmt::format("{}|{}|{}", estimator_name, norm.describe(), frames_fingerprint);
}

FlowSequence compute_flow_sequence(const FrameSequence& frames, FlowEstimator& estimator, const FlowNormalization& norm,
                                   const FlowCache* cache, const std::string& frames_fingerprint) {
  require(frames.size() >= 2, ErrorCode::kInsufficientData,
          fmt::format("'{}': need at least 2 frames for flow, got {}", frames.source_id, frames.size()));
  check_uniform_shape(frames);
  const std::string key = flow_cache_key(estimator.name(), norm, frames_fingerprint);
  FlowSequence out;
  out.source_id = frames.source_id;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    const int index = static_cast<int>(i);
    if (cache != nullptr) {
      if (auto hit = cache->load(frames.source_id, index, key)) {
        out.maps.push_back(std::move(*hit));
        continue;
      }
    }
    const FlowField field = estimator.estimate(frames.frames[i], frames.frames[i + 1]);
    RgbImage map = encode_flow_rgb(field, norm);
    if (cache != nullptr) cache->store(frames.source_id, index, key, map, &field);
    out.maps.push_back(std::move(map));
  }
  return out;
}

}  // namespace aigvdet
