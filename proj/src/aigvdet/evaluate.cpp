#include "aigvdet/evaluate.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "aigvdet/csv.hpp"
#include "aigvdet/error.hpp"
#include "aigvdet/rng.hpp"
#include "aigvdet/video_io.hpp"

namespace aigvdet {
namespace {

std::pair<std::size_t, std::size_t> class_counts(const std::vector<std::pair<double, Label>>& scores) {
  std::size_t pos = 0;
  for (const auto& s : scores) pos += s.second == Label::kGenerated ? 1 : 0;
  return {pos, scores.size() - pos};
}

void require_both_classes(const std::vector<std::pair<double, Label>>& scores) {
  const auto [pos, neg] = class_counts(scores);
  require(pos > 0 && neg > 0, ErrorCode::kInsufficientData, "AUC needs both generated and real scores");
}

EvalReport score_group(const std::string& name, GenType type, const std::vector<const ScoredVideo*>& videos) {
  EvalReport r;
  r.subset = name;
  r.gen_type = type;
  std::vector<std::pair<Decision, Label>> decisions;
  std::vector<std::pair<double, Label>> scores;
  for (const auto* v : videos) {
    decisions.emplace_back(v->verdict.decision, v->record.label);
    scores.emplace_back(v->verdict.p_video, v->record.label);
    (v->record.is_generated() ? r.n_generated : r.n_real)++;
    r.video_ids.push_back(v->record.id);
    r.threshold = v->verdict.threshold;
  }
  r.acc = accuracy(decisions);
  r.auc = auc(scores);
  return r;
}

}  // namespace

double accuracy(const std::vector<std::pair<Decision, Label>>& verdicts) {
  require(!verdicts.empty(), ErrorCode::kInsufficientData, "accuracy of an empty verdict list");
  std::size_t correct = 0;
  for (const auto& [d, label] : verdicts)
    correct += (d == Decision::kGenerated) == (label == Label::kGenerated) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(verdicts.size());
}

double auc(const std::vector<std::pair<double, Label>>& scores) {
  require_both_classes(scores);
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].first < scores[b].first; });
  // Sum of 1-based mid-ranks of the generated scores.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]].first == scores[order[i]].first) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (scores[order[k]].second == Label::kGenerated) rank_sum += mid_rank;
    i = j;
  }
  const auto [pos, neg] = class_counts(scores);
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double roc_staircase_area(const std::vector<std::pair<double, Label>>& scores) {
  require_both_classes(scores);
  auto sorted = scores;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const auto [pos, neg] = class_counts(scores);
  double area = 0.0, tpr = 0.0, fpr = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t tp = 0, fp = 0, j = i;
    for (; j < sorted.size() && sorted[j].first == sorted[i].first; ++j)
      (sorted[j].second == Label::kGenerated ? tp : fp)++;
    const double next_tpr = tpr + static_cast<double>(tp) / static_cast<double>(pos);
    const double next_fpr = fpr + static_cast<double>(fp) / static_cast<double>(neg);
    area += (next_fpr - fpr) * (tpr + next_tpr) / 2.0;
    tpr = next_tpr;
    fpr = next_fpr;
    i = j;
  }
  return area;
}

std::string base_video_id(const std::string& id) { return id.substr(0, id.find('@')); }

std::vector<std::size_t> pick_real_partners(const std::vector<ScoredVideo>& scored, const std::string& subset,
                                            std::size_t n, std::uint64_t seed) {
  std::vector<std::pair<std::uint64_t, std::size_t>> pool;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].record.is_generated()) continue;
    pool.emplace_back(derive_seed(seed, subset + ":" + base_video_id(scored[i].record.id)), i);
  }
  std::sort(pool.begin(), pool.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return base_video_id(scored[a.second].record.id) < base_video_id(scored[b.second].record.id);
  });
  if (pool.size() < n)
    spdlog::warn("subset {}: only {} real test videos available for {} generated", subset, pool.size(), n);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < std::min(n, pool.size()); ++k) out.push_back(pool[k].second);
  return out;
}

std::vector<EvalReport> evaluate_subsets(const std::vector<ScoredVideo>& scored, const std::vector<std::string>& subsets,
                                         std::uint64_t pair_seed) {
  std::map<std::pair<int, std::string>, std::vector<const ScoredVideo*>> groups;
  for (const auto& v : scored)
    if (v.record.is_generated()) groups[{static_cast<int>(v.record.gen_type), v.record.generator}].push_back(&v);
  std::set<std::string> known;
  for (const auto& [key, _] : groups) known.insert(key.second);
  for (const auto& s : subsets)
    require(known.count(s) > 0, ErrorCode::kInvalidArgument, fmt::format("no generated test videos for subset '{}'", s));

  std::vector<EvalReport> reports;
  for (auto& [key, gens] : groups) {
    const auto& name = key.second;
    if (!subsets.empty() && std::find(subsets.begin(), subsets.end(), name) == subsets.end()) continue;
    std::sort(gens.begin(), gens.end(), [](const auto* a, const auto* b) { return a->record.id < b->record.id; });
    std::vector<const ScoredVideo*> members = gens;
    for (std::size_t i : pick_real_partners(scored, name, gens.size(), pair_seed)) members.push_back(&scored[i]);
    reports.push_back(score_group(name, static_cast<GenType>(key.first), members));
  }
  for (GenType type : {GenType::kT2V, GenType::kI2V}) {
    EvalReport avg;
    avg.subset = fmt::format("Average {}", to_string(type));
    avg.gen_type = type;
    avg.is_average = true;
    int k = 0;
    for (const auto& r : reports) {
      if (r.is_average || r.gen_type != type) continue;
      avg.n_generated += r.n_generated;
      avg.n_real += r.n_real;
      avg.acc += r.acc;
      avg.auc += r.auc;
      avg.threshold = r.threshold;
      ++k;
    }
    if (k == 0) continue;
    avg.acc /= k;
    avg.auc /= k;
    reports.push_back(avg);
  }
  return reports;
}

EvalReport evaluate_all(const std::vector<ScoredVideo>& scored, const std::string& name) {
  std::vector<const ScoredVideo*> all;
  for (const auto& v : scored) all.push_back(&v);
  return score_group(name, GenType::kNone, all);
}

std::string report_csv(const std::vector<EvalReport>& reports) {
  std::string out = "subset,n_gen,n_real,acc,auc\n";
  for (const auto& r : reports)
    out += fmt::format("{},{},{},{:.6f},{:.6f}\n", csv::escape(r.subset), r.n_generated, r.n_real, r.acc, r.auc);
  return out;
}

nlohmann::ordered_json report_json(const std::vector<EvalReport>& reports) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["subset"] = r.subset;
    j["gen_type"] = to_string(r.gen_type);
    j["n_gen"] = r.n_generated;
    j["n_real"] = r.n_real;
    j["acc"] = r.acc;
    j["auc"] = r.auc;
    j["threshold"] = r.threshold;
    j["average"] = r.is_average;
    j["videos"] = r.video_ids;
    rows.push_back(std::move(j));
  }
  return rows;
}

void write_report(const std::vector<EvalReport>& reports, const std::filesystem::path& csv_path) {
  const std::string csv = report_csv(reports);
  write_bytes_atomic(csv_path, std::vector<std::uint8_t>(csv.begin(), csv.end()));
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  const std::string json = report_json(reports).dump(2) + "\n";
  write_bytes_atomic(json_path, std::vector<std::uint8_t>(json.begin(), json.end()));
}

VideoRecord recompress_crf(const VideoRecord& video, int crf, const std::filesystem::path& out_dir) {
  require(crf >= 0 && crf <= 51, ErrorCode::kInvalidArgument, fmt::format("CRF must be in [0, 51], got {}", crf));
  const auto dir = out_dir / fmt::format("crf{}", crf);
  std::filesystem::create_directories(dir);
  VideoRecord out = video;
  out.id = fmt::format("{}@crf{}", base_video_id(video.id), crf);
  if (crf == 0) {
    out.path = dir / (base_video_id(video.id) + video.path.extension().string());
    std::filesystem::copy_file(video.path, out.path, std::filesystem::copy_options::overwrite_existing);
    return out;
  }
  const VideoInfo info = probe_video(video.path);
  std::vector<int> indices(static_cast<std::size_t>(info.frame_count));
  for (int i = 0; i < info.frame_count; ++i) indices[static_cast<std::size_t>(i)] = i;
  auto decoded = decode_frames(video.path, indices);
  require(!decoded.frames.empty(), ErrorCode::kDecode, "no frames decoded from " + video.path.string());
  const int w = decoded.frames.front().width() & ~1;
  const int h = decoded.frames.front().height() & ~1;
  require(w >= 2 && h >= 2, ErrorCode::kEncode, "video too small to re-encode: " + video.path.string());
  std::vector<RgbImage> frames;
  for (const auto& f : decoded.frames) frames.emplace_back(f.mat()(cv::Rect(0, 0, w, h)).clone());
  out.path = dir / (base_video_id(video.id) + ".mp4");
  out.container = Container::kMP4;
  out.width = w;
  out.height = h;
  write_video(out.path, frames, EncoderSettings{VideoCodec::kH264Crf, crf, info.fps > 0 ? info.fps : 25.0});
  return out;
}

std::string robustness_csv(const std::vector<RobustnessPoint>& points) {
  std::string out = "subset,crf,acc,auc\n";
  for (const auto& p : points) out += fmt::format("{},{},{:.6f},{:.6f}\n", csv::escape(p.subset), p.crf, p.acc, p.auc);
  return out;
}

void plot_robustness(const std::vector<RobustnessPoint>& points, const std::filesystem::path& png_path) {
  require(!points.empty(), ErrorCode::kInvalidArgument, "nothing to plot");
  std::vector<std::string> subsets;
  std::set<int> crf_set;
  for (const auto& p : points) {
    if (std::find(subsets.begin(), subsets.end(), p.subset) == subsets.end()) subsets.push_back(p.subset);
    crf_set.insert(p.crf);
  }
  const std::vector<int> crfs(crf_set.begin(), crf_set.end());
  const int panel_w = 420, panel_h = 320, margin = 50, legend_h = 22 * static_cast<int>(subsets.size()) + 10;
  RgbImage canvas(2 * panel_w, panel_h + legend_h);
  canvas.mat().setTo(cv::Scalar(255, 255, 255));
  const cv::Scalar palette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
  const cv::Scalar black(0, 0, 0), grey(200, 200, 200);
  const double lo = crfs.front(), hi = crfs.size() > 1 ? crfs.back() : crfs.front() + 1;

  for (int panel = 0; panel < 2; ++panel) {
    const int x0 = panel * panel_w + margin, x1 = (panel + 1) * panel_w - 20, y0 = 30, y1 = panel_h - margin;
    auto px = [&](double crf) { return static_cast<int>(x0 + (crf - lo) / (hi - lo) * (x1 - x0)); };
    auto py = [&](double v) { return static_cast<int>(y1 - v * (y1 - y0)); };
    for (int k = 0; k <= 4; ++k) {
      const double v = k / 4.0;
      cv::line(canvas.mat(), {x0, py(v)}, {x1, py(v)}, grey, 1);
      cv::putText(canvas.mat(), fmt::format("{:.2f}", v), {x0 - 42, py(v) + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1);
    }
    for (int c : crfs) {
      cv::line(canvas.mat(), {px(c), y1}, {px(c), y1 + 5}, black, 1);
      cv::putText(canvas.mat(), std::to_string(c), {px(c) - 8, y1 + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1);
    }
    cv::rectangle(canvas.mat(), {x0, y0}, {x1, y1}, black, 1);
    cv::putText(canvas.mat(), panel == 0 ? "ACC" : "AUC", {x0 + (x1 - x0) / 2 - 15, y0 - 10}, cv::FONT_HERSHEY_SIMPLEX,
                0.6, black, 1);
    cv::putText(canvas.mat(), "CRF", {x0 + (x1 - x0) / 2 - 15, y1 + 40}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1);
    for (std::size_t s = 0; s < subsets.size(); ++s) {
      std::vector<RobustnessPoint> line;
      for (const auto& p : points)
        if (p.subset == subsets[s]) line.push_back(p);
      std::sort(line.begin(), line.end(), [](const auto& a, const auto& b) { return a.crf < b.crf; });
      const cv::Scalar color = palette[s % std::size(palette)];
      for (std::size_t k = 0; k < line.size(); ++k) {
        const cv::Point pt(px(line[k].crf), py(panel == 0 ? line[k].acc : line[k].auc));
        cv::circle(canvas.mat(), pt, 3, color, cv::FILLED, cv::LINE_AA);
        if (k > 0) {
          const cv::Point prev(px(line[k - 1].crf), py(panel == 0 ? line[k - 1].acc : line[k - 1].auc));
          cv::line(canvas.mat(), prev, pt, color, 2, cv::LINE_AA);
        }
      }
    }
  }
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    const int y = panel_h + 15 + 22 * static_cast<int>(s);
    cv::line(canvas.mat(), {margin, y}, {margin + 30, y}, palette[s % std::size(palette)], 2);
    cv::putText(canvas.mat(), subsets[s], {margin + 40, y + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1);
  }
  if (png_path.has_parent_path()) std::filesystem::create_directories(png_path.parent_path());
  write_bytes_atomic(png_path, encode_png(canvas));
}

}  // namespace aigvdet
