#include "aigvdet/pipeline.hpp"

#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "aigvdet/error.hpp"
#include "aigvdet/parallel.hpp"
#include "aigvdet/rng.hpp"
#include "aigvdet/video_io.hpp"

namespace aigvdet {
namespace {

std::optional<nlohmann::json> read_meta(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    std::ifstream in(path);
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::kCacheCorrupt, "unreadable cache meta " + path.string());
  }
}

void write_meta(const std::filesystem::path& path, const nlohmann::json& meta) {
  const std::string text = meta.dump();
  write_bytes_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::filesystem::path frame_png(const std::filesystem::path& dir, int i) { return dir / fmt::format("frame_{}.png", i); }
std::filesystem::path frame_jpg(const std::filesystem::path& dir, int i) { return dir / fmt::format("frame_{}.jpg", i); }

bool all_exist(const std::filesystem::path& dir, int count, std::filesystem::path (*name)(const std::filesystem::path&, int)) {
  for (int i = 0; i < count; ++i)
    if (!std::filesystem::exists(name(dir, i))) return false;
  return true;
}

void check_id(const VideoRecord& r) {
  const bool ok = !r.id.empty() && r.id != "." && r.id != ".." && r.id.find('/') == std::string::npos &&
                  r.id.find('\\') == std::string::npos;
  if (!ok) fail(ErrorCode::kValidation, fmt::format("video id '{}' cannot name a cache directory", r.id));
}

const RgbImage& model_input(const Model& model, const RgbImage& image, CropMode mode, RgbImage& storage) {
  const int size = model.input_size();
  if (size == 0 || (image.width() == size && image.height() == size)) return image;
  storage = crop(image, CropPolicy{size, mode}, 0);
  return storage;
}

}  // namespace

Pipeline::Pipeline(const Config& cfg) : cfg_(cfg), root_(cfg.cache_root()) {
  sampling_.frames_per_video = static_cast<int>(cfg.get_int("sampling.frames_per_video"));
  sampling_.strategy = parse_sampling_strategy(cfg.get_string("sampling.strategy"));
  require(sampling_.frames_per_video >= 2, ErrorCode::kValidation, "sampling.frames_per_video must be >= 2");
  norm_ = parse_flow_normalization(cfg.get_string("flow.normalization"), cfg.get_double("flow.fixed_max"));
  const std::string name = cfg.get_string("flow.estimator");
  const std::filesystem::path raft = cfg.get_string("flow.raft_model");
  estimator_name_ = name;
  estimator_tag_ = name == "raft" ? raft.filename().string() : std::string();
  factory_ = [name, raft] { return make_flow_estimator(name, raft); };
}

void Pipeline::set_estimator_factory(EstimatorFactory factory) {
  estimator_name_ = factory()->name();
  estimator_tag_.clear();
  factory_ = std::move(factory);
}

std::unique_ptr<FlowEstimator> Pipeline::make_estimator() const { return factory_(); }

std::uint64_t Pipeline::content_hash(const std::filesystem::path& path) const {
  const auto stamp = fmt::format("{}|{}|{}", path.string(), std::filesystem::file_size(path),
                                 std::filesystem::last_write_time(path).time_since_epoch().count());
  {
    std::lock_guard lock(hash_mutex_);
    if (auto it = hash_memo_.find(stamp); it != hash_memo_.end()) return it->second;
  }
  const auto bytes = read_bytes(path);
  const std::uint64_t h = fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  std::lock_guard lock(hash_mutex_);
  hash_memo_[stamp] = h;
  return h;
}

std::string Pipeline::fingerprint(const VideoRecord& r) const {
  require(std::filesystem::exists(r.path), ErrorCode::kIo, fmt::format("'{}': no such file {}", r.id, r.path.string()));
  const std::string desc = fmt::format("{:016x}|{}|{}|{:.9g}", content_hash(r.path), sampling_.frames_per_video,
                                       cfg_.get_string("sampling.strategy"), cfg_.watermark_fraction(r.generator));
  return fmt::format("{:016x}", fnv1a64(desc));
}

bool Pipeline::equalizes(const VideoRecord& r) const { return r.is_generated() && cfg_.get_bool("jpeg_eq.enabled"); }

FrameSequence Pipeline::frames(const VideoRecord& r) const {
  check_id(r);
  const auto dir = root_ / r.id;
  const std::string fp = fingerprint(r);
  if (auto meta = read_meta(dir / "frames.meta"); meta && meta->value("fingerprint", "") == fp) {
    const int count = meta->value("count", 0);
    if (count >= 2 && all_exist(dir, count, frame_png)) {
      FrameSequence seq;
      seq.source_id = r.id;
      seq.fps = meta->value("fps", 0.0);
      seq.indices = meta->at("indices").get<std::vector<int>>();
      for (int i = 0; i < count; ++i) seq.frames.push_back(read_image(frame_png(dir, i)));
      return seq;
    }
  }
  if (!on_demand_) fail(ErrorCode::kIo, fmt::format("frames of '{}' are not cached under {}", r.id, dir.string()));

  std::vector<int> indices;
  if (sampling_.strategy == SamplingStrategy::kPrefix) {
    indices.resize(static_cast<std::size_t>(sampling_.frames_per_video));
    std::iota(indices.begin(), indices.end(), 0);
  } else {
    indices = sample_frame_indices(probe_video(r.path).frame_count, sampling_);
  }
  FrameSequence seq = crop_watermark(decode_video(r, indices), cfg_.watermark_fraction(r.generator));
  require(seq.size() >= 2, ErrorCode::kInsufficientData,
          fmt::format("'{}' has {} decodable frames; at least 2 are needed", r.id, seq.size()));

  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < seq.size(); ++i) write_bytes_atomic(frame_png(dir, static_cast<int>(i)), encode_png(seq.frames[i]));
  write_meta(dir / "frames.meta",
             {{"fingerprint", fp}, {"count", seq.size()}, {"indices", seq.indices}, {"fps", seq.fps}});
  return seq;
}

FrameSequence Pipeline::training_frames(const VideoRecord& r) const {
  if (!equalizes(r)) return frames(r);
  const auto dir = root_ / r.id;
  const int lo = static_cast<int>(cfg_.get_int("jpeg_eq.lo"));
  const int hi = static_cast<int>(cfg_.get_int("jpeg_eq.hi"));
  const auto seed = static_cast<std::uint64_t>(cfg_.get_int("train.seed"));
  const nlohmann::json want = {{"fingerprint", fingerprint(r)}, {"lo", lo}, {"hi", hi}, {"seed", seed}};

  FrameSequence seq = frames(r);
  if (auto meta = read_meta(dir / "frames_eq.meta"); meta && meta->value("key", nlohmann::json()) == want &&
                                                      all_exist(dir, static_cast<int>(seq.size()), frame_jpg)) {
    for (std::size_t i = 0; i < seq.size(); ++i) seq.frames[i] = read_image(frame_jpg(dir, static_cast<int>(i)));
    return seq;
  }
  if (!on_demand_) fail(ErrorCode::kIo, fmt::format("equalized frames of '{}' are not cached", r.id));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const int q = equalization_quality(seed, r.id, seq.indices[i], lo, hi);
    const auto bytes = encode_jpeg(seq.frames[i], q);
    write_bytes_atomic(frame_jpg(dir, static_cast<int>(i)), bytes);
    seq.frames[i] = decode_image(bytes);
  }
  write_meta(dir / "frames_eq.meta", {{"key", want}});
  return seq;
}

std::string Pipeline::flow_fingerprint(const VideoRecord& r) const {
  return fmt::format("{}|{}", estimator_tag_, fingerprint(r));
}

std::string Pipeline::flow_key(const VideoRecord& r) const {
  return flow_cache_key(estimator_name_, norm_, flow_fingerprint(r));
}

FlowSequence Pipeline::flows(const VideoRecord& r) const {
  check_id(r);
  const FlowCache cache(root_);
  const std::string key = flow_key(r);
  const int count = cached_frame_count(r);
  if (count >= 2) {
    FlowSequence out;
    out.source_id = r.id;
    for (int i = 0; i + 1 < count; ++i) {
      auto hit = cache.load(r.id, i, key);
      if (!hit) break;
      out.maps.push_back(std::move(*hit));
    }
    if (static_cast<int>(out.size()) == count - 1) return out;
  }
  if (!on_demand_) fail(ErrorCode::kIo, fmt::format("flow maps of '{}' are not cached", r.id));
  auto estimator = make_estimator();
  return compute_flow_sequence(frames(r), *estimator, norm_, &cache, flow_fingerprint(r));
}

int Pipeline::cached_frame_count(const VideoRecord& r) const {
  const auto meta = read_meta(root_ / r.id / "frames.meta");
  if (!meta || meta->value("fingerprint", "") != fingerprint(r)) return 0;
  return meta->value("count", 0);
}

RgbImage Pipeline::cached_frame(const VideoRecord& r, int i, bool training) const {
  const auto dir = root_ / r.id;
  const auto path = training && equalizes(r) ? frame_jpg(dir, i) : frame_png(dir, i);
  if (!std::filesystem::exists(path)) fail(ErrorCode::kIo, fmt::format("missing cached frame {}", path.string()));
  return read_image(path);
}

RgbImage Pipeline::cached_flow(const VideoRecord& r, int i) const {
  auto hit = FlowCache(root_).load(r.id, i, flow_key(r));
  if (!hit) fail(ErrorCode::kIo, fmt::format("missing cached flow map {} of '{}'", i, r.id));
  return std::move(*hit);
}

PipelineSource::PipelineSource(const Pipeline& pipeline, std::vector<VideoRecord> records)
    : pipeline_(pipeline), records_(std::move(records)) {
  for (const auto& r : records_) {
    const int n = pipeline_.cached_frame_count(r);
    if (n < 2) fail(ErrorCode::kIo, fmt::format("'{}' has not been prepared; run prep first", r.id));
    counts_.push_back(n);
  }
}

void prepare_records(const Pipeline& pipeline, const std::vector<VideoRecord>& records, bool with_flow, int jobs) {
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    const auto& r = records[i];
    pipeline.frames(r);
    if (r.split == Split::kTrain || r.split == Split::kVal) pipeline.training_frames(r);
    if (with_flow) pipeline.flows(r);
  });
}

ModelBundle ModelBundle::two_branch(std::shared_ptr<const Model> spatial, std::shared_ptr<const Model> flow) {
  require(spatial && spatial->variant() == Variant::kSSpatial, ErrorCode::kValidation,
          "the first AIGVDet checkpoint must be an S_spatial model");
  require(flow && (flow->variant() == Variant::kSOptical || flow->variant() == Variant::kSOpticalNoCp),
          ErrorCode::kValidation, "the second AIGVDet checkpoint must be an S_optical model");
  ModelBundle b;
  b.variant = Variant::kAIGVDet;
  b.spatial = std::move(spatial);
  b.flow = std::move(flow);
  return b;
}

ModelBundle ModelBundle::single(std::shared_ptr<const Model> model) {
  require(model != nullptr, ErrorCode::kInvalidArgument, "null model");
  ModelBundle b;
  b.variant = model->variant();
  switch (b.variant) {
    case Variant::kSSpatial: b.spatial = std::move(model); break;
    case Variant::kSOptical:
    case Variant::kSOpticalNoCp: b.flow = std::move(model); break;
    default: b.fused = std::move(model);
  }
  return b;
}

bool ModelBundle::needs_flow() const { return variant != Variant::kSSpatial; }
bool ModelBundle::needs_frames() const { return variant != Variant::kSOptical && variant != Variant::kSOpticalNoCp; }

VideoVerdict score_video(const ModelBundle& bundle, const std::string& video_id, const FrameSequence& frames,
                         const FlowSequence& flows, const InferenceOptions& opts) {
  int n = bundle.needs_flow() ? static_cast<int>(flows.size()) : static_cast<int>(frames.size()) - 1;
  if (bundle.needs_frames() && bundle.needs_flow())
    require(frames.size() == flows.size() + 1, ErrorCode::kShape,
            fmt::format("'{}': {} frames cannot pair with {} flow maps", video_id, frames.size(), flows.size()));
  const bool extra = opts.score_all_frames && bundle.needs_frames();
  const int terms = n + (extra ? 1 : 0);
  require(terms >= 1, ErrorCode::kInsufficientData, fmt::format("'{}' has nothing to score", video_id));

  std::vector<FramePrediction> preds(static_cast<std::size_t>(terms));
  for (int i = 0; i < terms; ++i) {
    auto& p = preds[static_cast<std::size_t>(i)];
    p.index = i;
    const int fi = std::min(i, n - 1);  // flow map paired with frame i
    RgbImage s_store, f_store;
    switch (bundle.variant) {
      case Variant::kAIGVDet: {
        p.p_spatial = bundle.spatial->probability({&model_input(*bundle.spatial, frames.frames[i], opts.crop_mode, s_store), nullptr});
        p.p_flow = bundle.flow->probability({nullptr, &model_input(*bundle.flow, flows.maps[fi], opts.crop_mode, f_store)});
        p.p_fused = fuse_frame(*p.p_spatial, *p.p_flow, opts.alpha);
        break;
      }
      case Variant::kSSpatial:
        p.p_spatial = bundle.spatial->probability({&model_input(*bundle.spatial, frames.frames[i], opts.crop_mode, s_store), nullptr});
        p.p_fused = *p.p_spatial;
        break;
      case Variant::kSOptical:
      case Variant::kSOpticalNoCp:
        p.p_flow = bundle.flow->probability({nullptr, &model_input(*bundle.flow, flows.maps[fi], opts.crop_mode, f_store)});
        p.p_fused = *p.p_flow;
        break;
      default:
        p.p_fused = bundle.fused->probability({&model_input(*bundle.fused, frames.frames[i], opts.crop_mode, s_store),
                                               &model_input(*bundle.fused, flows.maps[fi], opts.crop_mode, f_store)});
    }
  }
  return make_verdict(video_id, std::move(preds), opts.alpha, opts.threshold);
}

VideoVerdict infer_video(const Pipeline& pipeline, const ModelBundle& bundle, const VideoRecord& record,
                         const InferenceOptions& opts) {
  const FrameSequence frames = pipeline.frames(record);
  const FlowSequence flows = bundle.needs_flow() ? pipeline.flows(record) : FlowSequence{};
  return score_video(bundle, record.id, frames, flows, opts);
}

VideoRecord record_for_file(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::kIo, "no such video: " + path.string());
  const VideoInfo info = probe_video(path);
  VideoRecord r;
  r.id = path.stem().string();
  r.path = path;
  r.width = info.width;
  r.height = info.height;
  const auto ext = path.extension().string();
  r.container = ext == ".gif" ? Container::kGIF : ext == ".mp4" ? Container::kMP4 : Container::kOther;
  return r;
}

}  // namespace aigvdet
