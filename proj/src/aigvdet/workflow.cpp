#include "aigvdet/workflow.hpp"

#include <chrono>
#include <ctime>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "aigvdet/error.hpp"
#include "aigvdet/parallel.hpp"
#include "aigvdet/rng.hpp"

namespace aigvdet {
namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

int jobs_of(const Config& cfg) { return static_cast<int>(cfg.get_int("runtime.jobs")); }

AugmentationConfig augmentation_from(const Config& cfg) {
  AugmentationConfig a;
  a.apply_fraction = cfg.get_double("augment.apply_fraction");
  a.blur_sigma = cfg.get_double("augment.blur_sigma");
  a.jpeg_quality = static_cast<int>(cfg.get_int("augment.jpeg_quality"));
  a.allow_flip = cfg.get_bool("augment.allow_flip");
  a.selection = parse_augment_selection(cfg.get_string("augment.selection"));
  return a;
}

}  // namespace

void validate_config(const Config& cfg) {
  require(cfg.get_int("sampling.frames_per_video") >= 2, ErrorCode::kValidation, "sampling.frames_per_video must be >= 2");
  parse_sampling_strategy(cfg.get_string("sampling.strategy"));
  for (const auto& [key, value] : cfg.values().items()) {
    if (key.rfind("watermark.", 0) != 0) continue;
    const double f = value.get<double>();
    require(f >= 0.0 && f < 1.0, ErrorCode::kValidation, fmt::format("{} must be in [0,1), got {}", key, f));
  }
  const auto lo = cfg.get_int("jpeg_eq.lo"), hi = cfg.get_int("jpeg_eq.hi");
  require(1 <= lo && lo <= hi && hi <= 100, ErrorCode::kValidation, "jpeg_eq needs 1 <= lo <= hi <= 100");
  require(cfg.get_int("crop.size") >= 1, ErrorCode::kValidation, "crop.size must be >= 1");
  parse_crop_mode(cfg.get_string("crop.mode"));
  parse_crop_mode(cfg.get_string("crop.train_mode"));
  validate(augmentation_from(cfg));
  const auto estimator = cfg.get_string("flow.estimator");
  require(estimator == "farneback" || estimator == "phase_stub" || estimator == "raft", ErrorCode::kValidation,
          "flow.estimator must be farneback, phase_stub or raft");
  parse_flow_normalization(cfg.get_string("flow.normalization"), cfg.get_double("flow.fixed_max"));
  require(cfg.get_double("flow.fixed_max") > 0.0, ErrorCode::kValidation, "flow.fixed_max must be > 0");
  require(is_known_backbone(cfg.get_string("model.backbone")), ErrorCode::kValidation,
          "model.backbone must be tiny, resnet-mini or resnet50");
  validate(train_config_from(cfg, Variant::kSSpatial));
  const double alpha = cfg.get_double("fusion.alpha"), threshold = cfg.get_double("fusion.threshold");
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::kValidation, "fusion.alpha must be in (0,1)");
  require(threshold >= 0.0 && threshold <= 1.0, ErrorCode::kValidation, "fusion.threshold must be in [0,1]");
  require(cfg.get_int("split.train_n") >= 1, ErrorCode::kValidation, "split.train_n must be >= 1");
  require(cfg.get_double("split.ratio") > 0.0, ErrorCode::kValidation, "split.ratio must be > 0");
  const auto grid = cfg.get_int_list("eval.crf_grid");
  require(!grid.empty(), ErrorCode::kValidation, "eval.crf_grid must not be empty");
  for (int c : grid) require(c >= 0 && c <= 51, ErrorCode::kValidation, fmt::format("CRF {} outside [0,51]", c));
  require(jobs_of(cfg) >= 1, ErrorCode::kValidation, "runtime.jobs must be >= 1");
}

std::filesystem::path create_run_dir(const Config& cfg) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  const std::filesystem::path root = cfg.get_string("runtime.runs_root");
  const std::string base = fmt::format("{}-{}", stamp, cfg.hash());
  std::filesystem::path dir = root / base;
  for (int k = 2; std::filesystem::exists(dir); ++k) dir = root / fmt::format("{}-{}", base, k);
  std::filesystem::create_directories(dir);
  write_text(dir / "config.snapshot", cfg.snapshot());
  return dir;
}

BranchConfig branch_config_from(const Config& cfg) {
  BranchConfig b;
  b.backbone = cfg.get_string("model.backbone");
  b.input_size = static_cast<int>(cfg.get_int("crop.size"));
  b.pretrained = !cfg.get_string("model.pretrained").empty();
  return b;
}

TrainConfig train_config_from(const Config& cfg, Variant variant) {
  TrainConfig t;
  t.lr_init = cfg.get_double("train.lr_init");
  t.lr_min = cfg.get_double("train.lr_min");
  t.plateau_patience = static_cast<int>(cfg.get_int("train.plateau_patience"));
  t.lr_factor = cfg.get_double("train.lr_factor");
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed"));
  t.max_epochs = static_cast<int>(cfg.get_int("train.max_epochs"));
  t.weight_decay = cfg.get_double("train.weight_decay");
  t.val_threshold = cfg.get_double("train.val_threshold");
  t.jobs = jobs_of(cfg);
  const int size = static_cast<int>(cfg.get_int("crop.size"));
  const bool crop_flow = variant != Variant::kSOpticalNoCp;
  const AugmentationConfig spatial = augmentation_from(cfg);
  AugmentationConfig flow = spatial;
  flow.flip_only = !cfg.get_bool("augment.flow_full");
  t.train_sampling = SampleOptions{{size, parse_crop_mode(cfg.get_string("crop.train_mode"))}, crop_flow, spatial, flow};
  t.val_sampling = SampleOptions{{size, parse_crop_mode(cfg.get_string("crop.mode"))}, crop_flow, std::nullopt, std::nullopt};
  return t;
}

InferenceOptions inference_options_from(const Config& cfg) {
  InferenceOptions o;
  o.alpha = cfg.get_double("fusion.alpha");
  o.threshold = cfg.get_double("fusion.threshold");
  o.score_all_frames = cfg.get_bool("fusion.score_all_frames");
  o.crop_mode = parse_crop_mode(cfg.get_string("crop.mode"));
  return o;
}

SplitOptions split_options_from(const Config& cfg) {
  SplitOptions s;
  s.train_n = static_cast<int>(cfg.get_int("split.train_n"));
  s.ratio = cfg.get_double("split.ratio");
  s.seed = static_cast<std::uint64_t>(cfg.get_int("split.seed"));
  s.train_generator = cfg.get_string("split.train_generator");
  return s;
}

std::vector<VideoRecord> records_in(const std::vector<VideoRecord>& records, Split split) {
  std::vector<VideoRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

std::vector<TrainOutcome> train_variant(const Config& cfg, const Pipeline& pipeline,
                                        const std::vector<VideoRecord>& records, Variant variant,
                                        const std::filesystem::path& run_dir) {
  if (variant == Variant::kAIGVDet) {
    auto out = train_variant(cfg, pipeline, records, Variant::kSSpatial, run_dir);
    auto flow = train_variant(cfg, pipeline, records, Variant::kSOptical, run_dir);
    out.push_back(std::move(flow.front()));
    return out;
  }
  const auto train = records_in(records, Split::kTrain);
  const auto val = records_in(records, Split::kVal);
  require(!train.empty() && !val.empty(), ErrorCode::kInsufficientData,
          "the manifest has no train/val records; assign splits first");
  const bool with_flow = variant != Variant::kSSpatial;
  std::vector<VideoRecord> both = train;
  both.insert(both.end(), val.begin(), val.end());
  prepare_records(pipeline, both, with_flow, jobs_of(cfg));

  const TrainConfig tc = train_config_from(cfg, variant);
  std::shared_ptr<Model> model = make_model(variant, branch_config_from(cfg), derive_seed(tc.seed, to_string(variant)));
  if (const auto pretrained = cfg.get_string("model.pretrained"); !pretrained.empty()) {
    const int n = load_pretrained_backbone(*model, pretrained);
    spdlog::info("{}: loaded {} pretrained backbone tensors from {}", to_string(variant), n, pretrained);
  }
  const nlohmann::json recipe = {{"variant", to_string(variant)}, {"config", cfg.values()}};
  TrainOutcome outcome;
  outcome.variant = variant;
  outcome.run_dir = run_dir / to_string(variant);
  outcome.state = train_model(*model, PipelineSource(pipeline, train), PipelineSource(pipeline, val), tc,
                              outcome.run_dir, recipe);
  outcome.best_checkpoint = outcome.run_dir / "best.ckpt";
  outcome.model = std::move(model);
  return {std::move(outcome)};
}

ModelBundle load_bundle(const std::vector<std::filesystem::path>& checkpoints) {
  require(checkpoints.size() == 1 || checkpoints.size() == 2, ErrorCode::kInvalidArgument,
          "pass one checkpoint, or an S_spatial and an S_optical checkpoint");
  std::shared_ptr<const Model> first = load_checkpoint(checkpoints[0]).model;
  if (checkpoints.size() == 1) return ModelBundle::single(std::move(first));
  std::shared_ptr<const Model> second = load_checkpoint(checkpoints[1]).model;
  return ModelBundle::two_branch(std::move(first), std::move(second));
}

std::vector<ScoredVideo> score_records(const Pipeline& pipeline, const ModelBundle& bundle,
                                       const std::vector<VideoRecord>& records, const InferenceOptions& opts, int jobs) {
  std::vector<ScoredVideo> out(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    out[i].record = records[i];
    out[i].verdict = infer_video(pipeline, bundle, records[i], opts);
  });
  return out;
}

std::string verdicts_jsonl(const std::vector<ScoredVideo>& scored) {
  std::string out;
  for (const auto& s : scored) out += to_json(s.verdict).dump() + "\n";
  return out;
}

EvaluationResult evaluate_bundle(const Config& cfg, const Pipeline& pipeline, const ModelBundle& bundle,
                                 const std::vector<VideoRecord>& test, const std::vector<std::string>& subsets,
                                 const std::filesystem::path& out_dir) {
  require(!test.empty(), ErrorCode::kInsufficientData, "no test records to evaluate");
  EvaluationResult result;
  result.scored = score_records(pipeline, bundle, test, inference_options_from(cfg), jobs_of(cfg));
  result.reports = evaluate_subsets(result.scored, subsets, static_cast<std::uint64_t>(cfg.get_int("eval.pair_seed")));
  if (subsets.empty()) result.reports.push_back(evaluate_all(result.scored, "All"));
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "verdicts.jsonl", verdicts_jsonl(result.scored));
    write_report(result.reports, out_dir / "report.csv");
  }
  return result;
}

std::vector<AblationRow> run_ablation(const Config& cfg, const Pipeline& pipeline,
                                      const std::vector<VideoRecord>& records, const std::filesystem::path& run_dir) {
  const auto test = records_in(records, Split::kTest);
  std::vector<std::pair<Variant, ModelBundle>> bundles;
  std::shared_ptr<const Model> spatial, optical;
  for (Variant v : kAllVariants) {
    if (v == Variant::kAIGVDet) continue;
    auto trained = train_variant(cfg, pipeline, records, v, run_dir);
    std::shared_ptr<const Model> model = trained.front().model;
    if (v == Variant::kSSpatial) spatial = model;
    if (v == Variant::kSOptical) optical = model;
    bundles.emplace_back(v, ModelBundle::single(model));
  }
  bundles.emplace_back(Variant::kAIGVDet, ModelBundle::two_branch(spatial, optical));

  std::vector<AblationRow> rows;
  for (const auto& [variant, bundle] : bundles) {
    auto result = evaluate_bundle(cfg, pipeline, bundle, test, {}, run_dir / to_string(variant) / "eval");
    rows.push_back({variant, std::move(result.reports)});
  }
  write_text(run_dir / "ablation.csv", ablation_csv(rows));
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& row : rows) j[to_string(row.variant)] = report_json(row.reports);
  write_text(run_dir / "ablation.json", j.dump(2) + "\n");
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,subset,n_gen,n_real,acc,auc\n";
  for (const auto& row : rows)
    for (const auto& r : row.reports)
      out += fmt::format("{},{},{},{},{:.6f},{:.6f}\n", to_string(row.variant), r.subset, r.n_generated, r.n_real,
                         r.acc, r.auc);
  return out;
}

RobustnessResult run_robustness(const Config& cfg, const Pipeline& pipeline, const ModelBundle& bundle,
                                const std::vector<VideoRecord>& test, const std::vector<int>& grid,
                                const std::filesystem::path& run_dir) {
  require(!grid.empty(), ErrorCode::kInvalidArgument, "empty CRF grid");
  RobustnessResult result;
  for (int crf : grid) {
    std::vector<VideoRecord> derived(test.size());
    parallel_for(test.size(), jobs_of(cfg), [&](std::size_t i) { derived[i] = recompress_crf(test[i], crf, run_dir); });
    const auto eval = evaluate_bundle(cfg, pipeline, bundle, derived, {}, run_dir / fmt::format("crf{}", crf));
    for (const auto& r : eval.reports)
      if (!r.is_average && r.gen_type != GenType::kNone) result.points.push_back({r.subset, crf, r.acc, r.auc});
    result.derived.push_back(std::move(derived));
  }
  write_text(run_dir / "robustness.csv", robustness_csv(result.points));
  plot_robustness(result.points, run_dir / "robustness.png");
  return result;
}

}  // namespace aigvdet
