// Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero if
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include "aigvdet/config.hpp"
#include "aigvdet/error.hpp"
#include "aigvdet/evaluate.hpp"
#include "aigvdet/flow.hpp"
#include "aigvdet/fusion.hpp"
#include "aigvdet/pipeline.hpp"
#include "aigvdet/rng.hpp"
#include "aigvdet/toy_corpus.hpp"
#include "aigvdet/train.hpp"
#include "aigvdet/workflow.hpp"

namespace fs = std::filesystem;
using namespace aigvdet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_text(const fs::path& p) {
  const auto bytes = read_bytes(p);
  return std::string(bytes.begin(), bytes.end());
}

// 1. Fusion bounds and linearity; aggregation against a naive running sum.
Outcome fusion_exactness() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(1, "acceptance-fusion"));
  double worst_lin = 0.0, worst_agg = 0.0;
  bool bounds_ok = true;
  for (int k = 0; k < 10000; ++k) {
    const double ps = uniform01(rng), pf = uniform01(rng);
    double alpha = uniform01(rng);
    if (alpha == 0.0) alpha = 0.5;
    const double fused = fuse_frame(ps, pf, alpha);
    bounds_ok = bounds_ok && fused >= std::min(ps, pf) - 1e-15 && fused <= std::max(ps, pf) + 1e-15;
    // Linear in alpha: pf + alpha * (ps - pf).
    worst_lin = std::max(worst_lin, std::abs(fused - (pf + alpha * (ps - pf))));
  }
  for (int k = 0; k < 1000; ++k) {
    const int n = static_cast<int>(uniform_int(rng, 1, 200));
    std::vector<FramePrediction> frames(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      frames[static_cast<std::size_t>(i)].p_fused = uniform01(rng);
      sum += frames[static_cast<std::size_t>(i)].p_fused;
    }
    worst_agg = std::max(worst_agg, std::abs(aggregate_video(frames) - sum / n));
  }
  const double secs = seconds_since(t0);
  const bool pass = bounds_ok && worst_lin <= 1e-12 && worst_agg <= 1e-12 && secs < 1.0;
  return {pass, fmt::format("bounds {} | max linearity err {:.2e} | max aggregation err {:.2e} | {:.3f}s",
                            bounds_ok ? "ok" : "violated", worst_lin, worst_agg, secs)};
}

double brute_force_auc(const std::vector<std::pair<double, Label>>& s) {
  double wins = 0.0;
  long pairs = 0;
  for (const auto& g : s) {
    if (g.second != Label::kGenerated) continue;
    for (const auto& r : s) {
      if (r.second != Label::kReal) continue;
      ++pairs;
      if (g.first > r.first)
        wins += 1.0;
      else if (g.first == r.first)
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// 2. Rank AUC against the quadratic pairwise oracle, plus monotone invariance.
Outcome auc_oracle() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(2, "acceptance-auc"));
  double worst = 0.0, worst_mono = 0.0;
  for (int k = 0; k < 200; ++k) {
    const int n = static_cast<int>(uniform_int(rng, 2, 50));
    std::vector<std::pair<double, Label>> s;
    for (int i = 0; i < n; ++i) {
      // Coarse grid so ties are common.
      const double score = static_cast<double>(uniform_int(rng, 0, 10)) / 10.0;
      s.emplace_back(score, uniform01(rng) < 0.5 ? Label::kGenerated : Label::kReal);
    }
    s[0].second = Label::kGenerated;
    s[1].second = Label::kReal;
    const double a = auc(s);
    worst = std::max(worst, std::abs(a - brute_force_auc(s)));
    auto t = s;
    for (auto& p : t) p.first = std::exp(3.0 * p.first) - 7.0;
    worst_mono = std::max(worst_mono, std::abs(auc(t) - a));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst <= 1e-12 && worst_mono <= 1e-12 && secs < 5.0;
  return {pass, fmt::format("max |rank - pairwise| {:.2e} | max monotone drift {:.2e} | {:.3f}s", worst, worst_mono, secs)};
}

// 3. Fusing per frame then averaging equals fusing the per-branch means.
Outcome pipeline_linearity() {
  Rng rng(derive_seed(3, "acceptance-linearity"));
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const int n = static_cast<int>(uniform_int(rng, 1, 120));
    const double alpha = 0.01 + 0.98 * uniform01(rng);
    std::vector<double> ps(static_cast<std::size_t>(n)), pf(static_cast<std::size_t>(n));
    double ms = 0.0, mf = 0.0;
    for (int i = 0; i < n; ++i) {
      ps[static_cast<std::size_t>(i)] = uniform01(rng);
      pf[static_cast<std::size_t>(i)] = uniform01(rng);
      ms += ps[static_cast<std::size_t>(i)];
      mf += pf[static_cast<std::size_t>(i)];
    }
    ms /= n;
    mf /= n;
    const double video = aggregate_video(fuse_frames(ps, pf, alpha));
    worst = std::max(worst, std::abs(video - (alpha * ms + (1.0 - alpha) * mf)));
  }
  return {worst <= 1e-12, fmt::format("1000 videos | max err {:.2e}", worst)};
}

RgbImage textured_frame(int w, int h, std::uint64_t seed) {
  return make_toy_clip(false, false, w, h, 2, seed).front();
}

// 4. Flow contract: N -> N-1 maps, neutral zero motion, recovered 5 px translation.
Outcome flow_contract() {
  const auto t0 = Clock::now();
  GlobalShiftEstimator stub;
  bool counts_ok = true;
  const RgbImage base = textured_frame(64, 48, 41);
  for (int n = 2; n <= 8; ++n) {
    FrameSequence seq;
    for (int i = 0; i < n; ++i) {
      seq.frames.push_back(base.clone());
      seq.indices.push_back(i);
    }
    counts_ok = counts_ok && compute_flow_sequence(seq, stub, FlowNormalization::per_frame_max(), nullptr).size() ==
                                 static_cast<std::size_t>(n - 1);
  }
  const RgbImage neutral = encode_flow_rgb(stub.estimate(base, base), FlowNormalization::per_frame_max());
  RgbImage white(neutral.width(), neutral.height());
  white.mat().setTo(cv::Scalar::all(255));
  const int dev = max_abs_diff(neutral, white);

  // Shift the content 5 px to the right and estimate with the classical method.
  const RgbImage wide = textured_frame(140, 96, 42);
  const RgbImage a(wide.mat()(cv::Rect(10, 0, 128, 96)).clone());
  const RgbImage b(wide.mat()(cv::Rect(5, 0, 128, 96)).clone());
  FarnebackEstimator farneback;
  const FlowField f = farneback.estimate(a, b);
  std::vector<float> us;
  for (int y = 8; y < f.height() - 8; ++y)
    for (int x = 8; x < f.width() - 8; ++x) us.push_back(f.u(x, y));
  std::nth_element(us.begin(), us.begin() + static_cast<long>(us.size() / 2), us.end());
  const double median_u = us[us.size() / 2];
  const double secs = seconds_since(t0);
  const bool pass = counts_ok && dev <= 2 && median_u >= 4.0 && median_u <= 6.0 && secs < 30.0;
  return {pass, fmt::format("N->N-1 {} | zero-motion deviation {}/255 | median u {:.3f} px | {:.2f}s",
                            counts_ok ? "ok" : "broken", dev, median_u, secs)};
}

// 5. Scripted validation trace through the plateau schedule.
Outcome schedule_oracle() {
  PlateauSchedule s(1e-4, 1e-6, 5, 10.0);
  // Epoch 1 counts as an improvement; every later epoch is flat.
  const std::vector<double> trace(16, 0.7);
  // Hand-simulated: lr in effect after each observation, and the epoch that terminates.
  std::vector<double> expected_lr;
  for (int e = 1; e <= 15; ++e) expected_lr.push_back(e < 6 ? 1e-4 : (e < 11 ? 1e-5 : 1e-6));
  std::vector<double> lrs;
  int terminated_at = 0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto action = s.observe(trace[i]);
    if (action == PlateauSchedule::Action::kTerminate) {
      terminated_at = static_cast<int>(i) + 1;
      break;
    }
    lrs.push_back(s.lr());
  }
  bool lr_ok = lrs.size() == expected_lr.size();
  for (std::size_t i = 0; lr_ok && i < lrs.size(); ++i) lr_ok = std::abs(lrs[i] - expected_lr[i]) <= 1e-18;
  const bool pass = lr_ok && terminated_at == 16 && s.reductions() == 2;
  return {pass, fmt::format("lr 1e-4 x5 -> 1e-5 x5 -> 1e-6 x5 -> terminate at epoch {} | reductions {} | trace {}",
                            terminated_at, s.reductions(), lr_ok ? "matches" : "differs")};
}

// 9. BCE gradient against central differences.
Outcome bce_gradient() {
  Rng rng(derive_seed(9, "acceptance-bce"));
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double z = -8.0 + 16.0 * uniform01(rng);
    const int y = uniform01(rng) < 0.5 ? 0 : 1;
    const double h = 1e-5;
    const double numeric = (bce_with_logit(z + h, y).loss - bce_with_logit(z - h, y).loss) / (2.0 * h);
    const double analytic = bce_with_logit(z, y).grad;
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, rel);
  }
  return {worst <= 1e-4, fmt::format("1000 (logit, label) pairs | max relative error {:.2e}", worst)};
}

struct ToyRun {
  fs::path root;
  Config cfg;
  std::vector<VideoRecord> records;
  std::vector<TrainOutcome> trained;
  EvaluationResult fused, spatial, flow;
  double seconds = 0.0;
};

Config toy_config(const fs::path& root) {
  Config cfg = Config::from_file(fs::path(AIGVDET_SOURCE_DIR) / "configs" / "toy.json");
  cfg.set("runtime.cache_root", (root / "cache").string());
  cfg.set("runtime.runs_root", (root / "runs").string());
  validate_config(cfg);
  return cfg;
}

// Generates, splits, trains both branches and evaluates the three detectors.
ToyRun toy_run(const fs::path& root) {
  const auto t0 = Clock::now();
  ToyRun run;
  run.root = root;
  run.cfg = toy_config(root);
  ToyCorpusOptions opts;
  opts.frames = static_cast<int>(run.cfg.get_int("sampling.frames_per_video"));
  make_toy_corpus(root / "corpus", opts);
  run.records = make_splits(load_manifest(root / "corpus" / "manifest.csv"), split_options_from(run.cfg));
  save_manifest(run.records, root / "corpus" / "manifest.csv");
  const Pipeline pipeline(run.cfg);
  const fs::path run_dir = root / "run";
  run.trained = train_variant(run.cfg, pipeline, run.records, Variant::kAIGVDet, run_dir);
  const auto test = records_in(run.records, Split::kTest);
  const auto bundle = ModelBundle::two_branch(run.trained[0].model, run.trained[1].model);
  run.fused = evaluate_bundle(run.cfg, pipeline, bundle, test, {}, run_dir / "eval_AIGVDet");
  run.spatial = evaluate_bundle(run.cfg, pipeline, ModelBundle::single(run.trained[0].model), test, {},
                                run_dir / "eval_S_spatial");
  run.flow = evaluate_bundle(run.cfg, pipeline, ModelBundle::single(run.trained[1].model), test, {},
                             run_dir / "eval_S_optical");
  run.seconds = seconds_since(t0);
  return run;
}

const EvalReport& row(const EvaluationResult& r, const std::string& subset) {
  for (const auto& rep : r.reports)
    if (rep.subset == subset) return rep;
  fail(ErrorCode::kRuntime, "missing report row " + subset);
}

// 6. Toy end-to-end separability.
Outcome toy_separability(const ToyRun& run) {
  const auto& fused = row(run.fused, "All");
  const auto& spatial = row(run.spatial, "All");
  const auto& flow = row(run.flow, "All");
  const bool ordering = flow.acc >= spatial.acc && flow.auc >= spatial.auc;
  const bool pass = fused.acc >= 0.95 && fused.auc >= 0.98 && ordering && run.seconds <= 3600.0;
  return {pass, fmt::format("fused ACC {:.4f} AUC {:.4f} | S_optical ACC {:.4f} AUC {:.4f} | S_spatial ACC {:.4f} AUC "
                            "{:.4f} | test {}+{} | {:.0f}s",
                            fused.acc, fused.auc, flow.acc, flow.auc, spatial.acc, spatial.auc, fused.n_generated,
                            fused.n_real, run.seconds)};
}

// 7. CRF sweep over the toy test split with the fused detector.
Outcome robustness_harness(const ToyRun& run) {
  const Pipeline pipeline(run.cfg);
  const auto bundle = ModelBundle::two_branch(run.trained[0].model, run.trained[1].model);
  const auto test = records_in(run.records, Split::kTest);
  const std::vector<int> grid{0, 18, 23, 28};
  const fs::path dir = run.root / "robustness";
  const auto result = run_robustness(run.cfg, pipeline, bundle, test, grid, dir);

  std::map<std::string, int> per_subset;
  for (const auto& p : result.points) ++per_subset[p.subset];
  bool four_each = !per_subset.empty();
  for (const auto& [subset, n] : per_subset) four_each = four_each && n == 4;

  bool crf0_exact = true;
  for (const auto& p : result.points) {
    if (p.crf != 0) continue;
    const auto& base = row(run.fused, p.subset);
    crf0_exact = crf0_exact && p.acc == base.acc && p.auc == base.auc;
  }
  const auto crf0 = evaluate_bundle(run.cfg, pipeline, bundle, result.derived[0], {}, {});
  for (std::size_t i = 0; i < crf0.scored.size(); ++i)
    crf0_exact = crf0_exact && crf0.scored[i].verdict.p_video == run.fused.scored[i].verdict.p_video;

  int size_violations = 0;
  for (std::size_t v = 0; v < test.size(); ++v) {
    const auto s18 = fs::file_size(result.derived[1][v].path);
    const auto s23 = fs::file_size(result.derived[2][v].path);
    const auto s28 = fs::file_size(result.derived[3][v].path);
    if (!(s18 > s23 && s23 > s28)) ++size_violations;
  }
  const bool artifacts = fs::exists(dir / "robustness.png") && fs::file_size(dir / "robustness.png") > 0 &&
                         fs::exists(dir / "robustness.csv");
  const bool pass = four_each && crf0_exact && size_violations == 0 && artifacts;
  std::string levels;
  for (const auto& p : result.points) levels += fmt::format(" {}@{}={:.3f}/{:.3f}", p.subset, p.crf, p.acc, p.auc);
  return {pass, fmt::format("{} subsets x 4 points {} | crf0 == uncompressed {} | size-order violations {}/{} | "
                            "plot+csv {} |{}",
                            per_subset.size(), four_each ? "ok" : "wrong", crf0_exact ? "yes" : "no", size_violations,
                            test.size(), artifacts ? "written" : "missing", levels)};
}

// 8. Two independent toy runs with the same seeds.
Outcome determinism(const ToyRun& a, const ToyRun& b) {
  bool same = true;
  std::vector<std::string> compared;
  for (const char* v : {"S_spatial", "S_optical"}) {
    same = same && read_text(a.root / "run" / v / "history.csv") == read_text(b.root / "run" / v / "history.csv");
    compared.push_back(fmt::format("{}/history.csv", v));
  }
  for (const char* e : {"eval_AIGVDet", "eval_S_spatial", "eval_S_optical"}) {
    same = same && read_text(a.root / "run" / e / "verdicts.jsonl") == read_text(b.root / "run" / e / "verdicts.jsonl");
    compared.push_back(fmt::format("{}/verdicts.jsonl", e));
  }
  return {same, fmt::format("{} files compared byte for byte: {}", compared.size(), same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  fs::path work = fs::temp_directory_path() / fmt::format("aigvdet-acceptance-{}", getpid());
  if (argc > 1) work = argv[1];
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "fusion/aggregation exactness", fusion_exactness);
  report(2, "AUC oracle equivalence", auc_oracle);
  report(3, "pipeline-linearity identity", pipeline_linearity);
  report(4, "flow contract", flow_contract);
  report(5, "schedule oracle", schedule_oracle);

  std::optional<ToyRun> first, second;
  std::string toy_error;
  try {
    first = toy_run(work / "a");
  } catch (const std::exception& e) {
    toy_error = e.what();
  }
  report(6, "toy end-to-end separability", [&] {
    if (!first) return Outcome{false, "toy run failed: " + toy_error};
    return toy_separability(*first);
  });
  report(7, "robustness harness", [&] {
    if (!first) return Outcome{false, "toy run failed: " + toy_error};
    return robustness_harness(*first);
  });
  report(8, "determinism", [&] {
    if (!first) return Outcome{false, "toy run failed: " + toy_error};
    second = toy_run(work / "b");
    return determinism(*first, *second);
  });
  report(9, "BCE gradient check", bce_gradient);

  std::printf("%d/9 criteria passed\n", 9 - failures);
  if (failures == 0) fs::remove_all(work);
  return failures == 0 ? 0 : 1;
}
