#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <memory>
#include <string>
#include <vector>

#include "aigvdet/config.hpp"
#include "aigvdet/dataset.hpp"
#include "aigvdet/flow.hpp"
#include "aigvdet/fusion.hpp"
#include "aigvdet/model.hpp"
#include "aigvdet/preprocess.hpp"
#include "aigvdet/train.hpp"

namespace aigvdet {

using EstimatorFactory = std::function<std::unique_ptr<FlowEstimator>()>;

// Per-video preprocessing backed by the on-disk caches:
//   <cache_root>/<id>/frames.meta, frame_<i>.png   sampled, watermark-cropped frames
//   <cache_root>/<id>/frames_eq.meta, frame_<i>.jpg JPEG-equalized copies (generated only)
//   <cache_root>/<id>/flow_<i>.png, flow_<i>.meta  encoded flow maps
class Pipeline {
 public:
  explicit Pipeline(const Config& cfg);

  const Config& config() const { return cfg_; }
  const std::filesystem::path& cache_root() const { return root_; }

  // Replaces the estimator built from flow.estimator (tests use this to count calls).
  void set_estimator_factory(EstimatorFactory factory);
  // When false, cache misses raise kIo instead of being computed.
  void set_on_demand(bool v) { on_demand_ = v; }

  // Content hash of the video file plus every option that shapes the frames.
  std::string fingerprint(const VideoRecord& r) const;

  FrameSequence frames(const VideoRecord& r) const;
  // Frames as the spatial branch sees them during training: JPEG-equalized for
  // generated videos when jpeg_eq.enabled, otherwise identical to frames().
  FrameSequence training_frames(const VideoRecord& r) const;
  FlowSequence flows(const VideoRecord& r) const;

  // Number of cached frames for a prepared video (0 when not prepared).
  int cached_frame_count(const VideoRecord& r) const;
  RgbImage cached_frame(const VideoRecord& r, int i, bool training) const;
  RgbImage cached_flow(const VideoRecord& r, int i) const;

 private:
  std::unique_ptr<FlowEstimator> make_estimator() const;
  std::uint64_t content_hash(const std::filesystem::path& path) const;
  std::string flow_fingerprint(const VideoRecord& r) const;
  std::string flow_key(const VideoRecord& r) const;
  bool equalizes(const VideoRecord& r) const;

  Config cfg_;
  std::filesystem::path root_;
  SamplingPolicy sampling_;
  FlowNormalization norm_;
  EstimatorFactory factory_;
  std::string estimator_name_;
  std::string estimator_tag_;  // RAFT weights file, so different checkpoints never share cache entries
  bool on_demand_ = true;
  mutable std::mutex hash_mutex_;
  mutable std::map<std::string, std::uint64_t> hash_memo_;  // keyed by path, size and mtime
};

// Lazily reads training inputs for a set of prepared records from the caches.
class PipelineSource final : public TrainingSource {
 public:
  PipelineSource(const Pipeline& pipeline, std::vector<VideoRecord> records);
  std::size_t size() const override { return records_.size(); }
  std::string id(std::size_t v) const override { return records_[v].id; }
  int label(std::size_t v) const override { return records_[v].is_generated() ? 1 : 0; }
  int frame_count(std::size_t v) const override { return counts_[v]; }
  int flow_count(std::size_t v) const override { return counts_[v] - 1; }
  RgbImage frame(std::size_t v, int i) const override { return pipeline_.cached_frame(records_[v], i, true); }
  RgbImage flow(std::size_t v, int i) const override { return pipeline_.cached_flow(records_[v], i); }

 private:
  const Pipeline& pipeline_;
  std::vector<VideoRecord> records_;
  std::vector<int> counts_;
};

// Populates frame (and, if requested, flow) caches for every record.
void prepare_records(const Pipeline& pipeline, const std::vector<VideoRecord>& records, bool with_flow, int jobs);

// Models needed to score one variant. AIGVDet uses `spatial` and `flow`; the
// single-branch variants use one of them; FF_* use `fused`.
struct ModelBundle {
  Variant variant = Variant::kAIGVDet;
  std::shared_ptr<const Model> spatial;
  std::shared_ptr<const Model> flow;
  std::shared_ptr<const Model> fused;

  static ModelBundle two_branch(std::shared_ptr<const Model> spatial, std::shared_ptr<const Model> flow);
  static ModelBundle single(std::shared_ptr<const Model> model);
  bool needs_flow() const;
  bool needs_frames() const;
};

struct InferenceOptions {
  double alpha = 0.5;
  double threshold = 0.1;
  // Score all N frames spatially; the last frame is paired with the final flow map.
  bool score_all_frames = false;
  // Test-time crop; a random window is drawn with seed 0 so repeated runs agree.
  CropMode crop_mode = CropMode::kCenter;
};

// Center-crops each input to its model's size (native size when that is 0), scores
// the frame/flow pairs and aggregates them into a verdict.
VideoVerdict score_video(const ModelBundle& bundle, const std::string& video_id, const FrameSequence& frames,
                         const FlowSequence& flows, const InferenceOptions& opts);

VideoVerdict infer_video(const Pipeline& pipeline, const ModelBundle& bundle, const VideoRecord& record,
                         const InferenceOptions& opts);

// A record for a loose video file (label unknown, treated as real).
VideoRecord record_for_file(const std::filesystem::path& path);

}  // namespace aigvdet
