#include "aigvdet/fusion.hpp"

#include <fmt/format.h>

#include "aigvdet/error.hpp"

namespace aigvdet {
namespace {

void require_probability(double p, const char* what) {
  require(p >= 0.0 && p <= 1.0, ErrorCode::kInvalidArgument, fmt::format("{} = {} is not a probability", what, p));
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

const char* to_string(Decision d) { return d == Decision::kGenerated ? "generated" : "real"; }

double fuse_frame(double p_spatial, double p_flow, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::kInvalidArgument, fmt::format("alpha = {} is outside (0, 1)", alpha));
  require_probability(p_spatial, "p_spatial");
  require_probability(p_flow, "p_flow");
  return alpha * p_spatial + (1.0 - alpha) * p_flow;
}

double aggregate_video(const std::vector<FramePrediction>& frames) {
  require(!frames.empty(), ErrorCode::kInvalidArgument, "cannot aggregate a video with no scored frames");
  double sum = 0.0;
  for (const auto& f : frames) sum += f.p_fused;
  return sum / static_cast<double>(frames.size());
}

Decision decide(double p_video, double threshold) {
  return p_video >= threshold ? Decision::kGenerated : Decision::kReal;
}

std::vector<FramePrediction> fuse_frames(const std::vector<double>& p_spatial, const std::vector<double>& p_flow,
                                         double alpha) {
  require(p_spatial.size() == p_flow.size(), ErrorCode::kShape,
          fmt::format("{} spatial scores cannot pair with {} flow scores", p_spatial.size(), p_flow.size()));
  std::vector<FramePrediction> out(p_spatial.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].index = static_cast<int>(i);
    out[i].p_spatial = p_spatial[i];
    out[i].p_flow = p_flow[i];
    out[i].p_fused = fuse_frame(p_spatial[i], p_flow[i], alpha);
  }
  return out;
}

VideoVerdict make_verdict(std::string video_id, std::vector<FramePrediction> frames, double alpha, double threshold) {
  VideoVerdict v;
  v.video_id = std::move(video_id);
  v.p_video = aggregate_video(frames);
  v.decision = decide(v.p_video, threshold);
  v.alpha = alpha;
  v.threshold = threshold;
  v.frames = std::move(frames);
  return v;
}

nlohmann::ordered_json to_json(const VideoVerdict& v) {
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (const auto& f : v.frames) {
    nlohmann::ordered_json fj;
    fj["i"] = f.index;
    fj["p_spatial"] = optional_json(f.p_spatial);
    fj["p_flow"] = optional_json(f.p_flow);
    fj["p_fused"] = f.p_fused;
    frames.push_back(std::move(fj));
  }
  nlohmann::ordered_json j;
  j["video_id"] = v.video_id;
  j["p_video"] = v.p_video;
  j["decision"] = to_string(v.decision);
  j["alpha"] = v.alpha;
  j["threshold"] = v.threshold;
  j["frames"] = std::move(frames);
  return j;
}

VideoVerdict verdict_from_json(const nlohmann::json& j) {
  try {
    VideoVerdict v;
    v.video_id = j.at("video_id").get<std::string>();
    v.p_video = j.at("p_video").get<double>();
    const auto d = j.at("decision").get<std::string>();
    require(d == "real" || d == "generated", ErrorCode::kParse, "bad decision '" + d + "'");
    v.decision = d == "generated" ? Decision::kGenerated : Decision::kReal;
    v.alpha = j.at("alpha").get<double>();
    v.threshold = j.at("threshold").get<double>();
    for (const auto& fj : j.at("frames")) {
      FramePrediction f;
      f.index = fj.at("i").get<int>();
      if (!fj.at("p_spatial").is_null()) f.p_spatial = fj.at("p_spatial").get<double>();
      if (!fj.at("p_flow").is_null()) f.p_flow = fj.at("p_flow").get<double>();
      f.p_fused = fj.at("p_fused").get<double>();
      v.frames.push_back(f);
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("verdict: ") + e.what());
  }
}

}  // namespace aigvdet
