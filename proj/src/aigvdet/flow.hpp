#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "aigvdet/image.hpp"
#include "aigvdet/preprocess.hpp"

namespace aigvdet {

// Dense displacement field in pixels/frame; u to the right, v downward.
class FlowField {
 public:
  FlowField() = default;
  FlowField(int width, int height) : uv_(height, width, CV_32FC2, cv::Scalar::all(0)) {}
  explicit FlowField(cv::Mat uv);

  int width() const { return uv_.cols; }
  int height() const { return uv_.rows; }
  float u(int x, int y) const { return uv_.ptr<float>(y)[2 * x]; }
  float v(int x, int y) const { return uv_.ptr<float>(y)[2 * x + 1]; }
  void set(int x, int y, float u, float v) {
    uv_.ptr<float>(y)[2 * x] = u;
    uv_.ptr<float>(y)[2 * x + 1] = v;
  }
  const cv::Mat& mat() const { return uv_; }

  bool all_finite() const;
  FlowField scaled(float c) const;

 private:
  cv::Mat uv_;
};

class FlowEstimator {
 public:
  virtual ~FlowEstimator() = default;
  virtual std::string name() const = 0;
  virtual bool deterministic() const = 0;

  // Throws kShape on a size mismatch and kNumerical on a non-finite result.
  FlowField estimate(const RgbImage& a, const RgbImage& b);

 protected:
  virtual FlowField do_estimate(const RgbImage& a, const RgbImage& b) = 0;
};

// Pyramidal polynomial-expansion (Farneback) dense flow. CPU only, no weights.
class FarnebackEstimator final : public FlowEstimator {
 public:
  std::string name() const override { return "farneback"; }
  bool deterministic() const override { return true; }

 protected:
  FlowField do_estimate(const RgbImage& a, const RgbImage& b) override;
};

// Test stub: a single global translation from phase correlation, broadcast to
// every pixel. Identical frames give an exactly zero field.
class GlobalShiftEstimator final : public FlowEstimator {
 public:
  std::string name() const override { return "phase_stub"; }
  bool deterministic() const override { return true; }

 protected:
  FlowField do_estimate(const RgbImage& a, const RgbImage& b) override;
};

// RAFT exported to ONNX, run through OpenCV's DNN module. Expects two inputs
// (1x3xHxW, RGB in [0,255]) and returns the final flow prediction (1x2xHxW).
// Frames are edge-padded to a multiple of 8.
class RaftOnnxEstimator final : public FlowEstimator {
 public:
  // Throws kBackendUnavailable when the model cannot be loaded.
  explicit RaftOnnxEstimator(const std::filesystem::path& model_path);
  ~RaftOnnxEstimator() override;
  std::string name() const override { return "raft"; }
  bool deterministic() const override { return true; }

 protected:
  FlowField do_estimate(const RgbImage& a, const RgbImage& b) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Wraps another estimator and counts how often it runs.
class CountingEstimator final : public FlowEstimator {
 public:
  explicit CountingEstimator(std::shared_ptr<FlowEstimator> inner) : inner_(std::move(inner)) {}
  std::string name() const override { return inner_->name(); }
  bool deterministic() const override { return inner_->deterministic(); }
  int calls() const { return calls_.load(); }

 protected:
  FlowField do_estimate(const RgbImage& a, const RgbImage& b) override {
    ++calls_;
    return inner_->estimate(a, b);
  }

 private:
  std::shared_ptr<FlowEstimator> inner_;
  std::atomic<int> calls_{0};
};

// name: farneback | phase_stub | raft
std::unique_ptr<FlowEstimator> make_flow_estimator(const std::string& name, const std::filesystem::path& raft_model = {});

struct FlowNormalization {
  enum class Kind { kPerFrameMax, kFixedMax };
  Kind kind = Kind::kPerFrameMax;
  double fixed_max = 20.0;

  static FlowNormalization per_frame_max() { return {}; }
  static FlowNormalization fixed(double max_magnitude) { return {Kind::kFixedMax, max_magnitude}; }
  std::string describe() const;
};

FlowNormalization parse_flow_normalization(const std::string& kind, double fixed_max);

inline constexpr double kFlowEpsilon = 1e-6;

// Color wheel: hue = atan2(v, u), saturation = |(u,v)| / normalizer (clamped to 1),
// value = 1. Zero motion is white.
RgbImage encode_flow_rgb(const FlowField& field, const FlowNormalization& norm);

// Middlebury .flo layout ("PIEH" tag, int32 width/height, interleaved float32 u,v).
void write_flo(const std::filesystem::path& path, const FlowField& field);
FlowField read_flo(const std::filesystem::path& path);

struct FlowSequence {
  std::vector<RgbImage> maps;
  std::string source_id;
  std::size_t size() const { return maps.size(); }
};

// On-disk cache of encoded flow maps: <root>/<video_id>/flow_<i>.png plus
// flow_<i>.meta (JSON: estimator, normalization, fingerprint, crc32). Entries whose
// meta disagrees with the request are misses; a checksum mismatch is kCacheCorrupt.
class FlowCache {
 public:
  explicit FlowCache(std::filesystem::path root, bool store_raw = false) : root_(std::move(root)), store_raw_(store_raw) {}

  std::optional<RgbImage> load(const std::string& video_id, int index, const std::string& key) const;
  void store(const std::string& video_id, int index, const std::string& key, const RgbImage& map,
             const FlowField* raw = nullptr) const;
  bool store_raw() const { return store_raw_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  bool store_raw_;
};

// Cache key for a (estimator, normalization, source frames) combination.
std::string flow_cache_key(const std::string& estimator_name, const FlowNormalization& norm,
                           const std::string& frames_fingerprint);

// N frames -> N-1 encoded maps. `cache` may be null.
FlowSequence compute_flow_sequence(const FrameSequence& frames, FlowEstimator& estimator, const FlowNormalization& norm,
                                   const FlowCache* cache, const std::string& frames_fingerprint = "");

}  // namespace aigvdet
