#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace aigvdet {

enum class Decision { kReal, kGenerated };
const char* to_string(Decision d);

// One scored frame. Single-branch variants leave the missing branch empty and
// p_fused carries that branch's probability.
struct FramePrediction {
  int index = 0;
  std::optional<double> p_spatial;
  std::optional<double> p_flow;
  double p_fused = 0.0;
};

struct VideoVerdict {
  std::string video_id;
  double p_video = 0.0;
  Decision decision = Decision::kReal;
  double alpha = 0.5;
  double threshold = 0.1;
  std::vector<FramePrediction> frames;
};

// alpha * p_spatial + (1 - alpha) * p_flow. Throws kInvalidArgument unless
// alpha is in (0, 1) and both probabilities are in [0, 1].
double fuse_frame(double p_spatial, double p_flow, double alpha);

// Mean of p_fused; throws kInvalidArgument on an empty list.
double aggregate_video(const std::vector<FramePrediction>& frames);

// Generated iff p_video >= threshold.
Decision decide(double p_video, double threshold);

// Pairs spatial score i with flow score i and fuses them.
std::vector<FramePrediction> fuse_frames(const std::vector<double>& p_spatial, const std::vector<double>& p_flow,
                                         double alpha);

VideoVerdict make_verdict(std::string video_id, std::vector<FramePrediction> frames, double alpha, double threshold);

nlohmann::ordered_json to_json(const VideoVerdict& v);
VideoVerdict verdict_from_json(const nlohmann::json& j);

}  // namespace aigvdet
