#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aigvdet/dataset.hpp"
#include "aigvdet/fusion.hpp"

namespace aigvdet {

// Fraction of (decision, label) pairs that agree. Throws on empty input.
double accuracy(const std::vector<std::pair<Decision, Label>>& verdicts);

// Mann-Whitney form: fraction of (generated, real) pairs with p_gen > p_real, ties
// counted one half. Computed by ranking in O(n log n). Throws kInsufficientData
// unless both classes are present.
double auc(const std::vector<std::pair<double, Label>>& scores);

// Area under the empirical ROC staircase traced by sweeping the threshold over the
// sorted unique scores (trapezoids across tied groups).
double roc_staircase_area(const std::vector<std::pair<double, Label>>& scores);

struct ScoredVideo {
  VideoRecord record;
  VideoVerdict verdict;
};

struct EvalReport {
  std::string subset;
  GenType gen_type = GenType::kNone;
  int n_generated = 0;
  int n_real = 0;
  double acc = 0.0;
  double auc = 0.0;
  double threshold = 0.1;
  bool is_average = false;
  std::vector<std::string> video_ids;
};

// The part of a derived id before '@' ("clip@crf23" -> "clip").
std::string base_video_id(const std::string& id);

// Real test videos paired with a generated subset of size n: seeded sampling
// without replacement, keyed by base id so derived copies pair identically.
std::vector<std::size_t> pick_real_partners(const std::vector<ScoredVideo>& scored, const std::string& subset,
                                            std::size_t n, std::uint64_t seed);

// One report per generator (optionally restricted to `subsets`), followed by
// "Average T2V" / "Average I2V" rows holding the arithmetic mean of acc and auc.
std::vector<EvalReport> evaluate_subsets(const std::vector<ScoredVideo>& scored, const std::vector<std::string>& subsets,
                                         std::uint64_t pair_seed);

// Metrics over every scored video at once (no pairing).
EvalReport evaluate_all(const std::vector<ScoredVideo>& scored, const std::string& name);

std::string report_csv(const std::vector<EvalReport>& reports);
nlohmann::ordered_json report_json(const std::vector<EvalReport>& reports);
void write_report(const std::vector<EvalReport>& reports, const std::filesystem::path& csv_path);

// Re-encodes a video with H.264 at `crf` into out_dir/crf<k>/<id>.mp4 and returns the
// derived record "<id>@crf<k>". crf 0 copies the file untouched. Odd frame sizes lose
// their last row/column, since 4:2:0 chroma needs even dimensions.
VideoRecord recompress_crf(const VideoRecord& video, int crf, const std::filesystem::path& out_dir);

struct RobustnessPoint {
  std::string subset;
  int crf = 0;
  double acc = 0.0;
  double auc = 0.0;
};

std::string robustness_csv(const std::vector<RobustnessPoint>& points);
// Line plot of ACC and AUC against CRF, one line per subset.
void plot_robustness(const std::vector<RobustnessPoint>& points, const std::filesystem::path& png_path);

}  // namespace aigvdet
