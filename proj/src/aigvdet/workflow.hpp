#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "aigvdet/config.hpp"
#include "aigvdet/dataset.hpp"
#include "aigvdet/evaluate.hpp"
#include "aigvdet/model.hpp"
#include "aigvdet/pipeline.hpp"
#include "aigvdet/train.hpp"

namespace aigvdet {

// Parses every enumerated option and range so bad settings fail before any work.
void validate_config(const Config& cfg);

// <runtime.runs_root>/<UTC timestamp>-<config hash>[-n]/ with config.snapshot inside.
std::filesystem::path create_run_dir(const Config& cfg);

BranchConfig branch_config_from(const Config& cfg);
TrainConfig train_config_from(const Config& cfg, Variant variant);
InferenceOptions inference_options_from(const Config& cfg);
SplitOptions split_options_from(const Config& cfg);

std::vector<VideoRecord> records_in(const std::vector<VideoRecord>& records, Split split);

struct TrainOutcome {
  Variant variant = Variant::kSSpatial;
  TrainState state;
  std::filesystem::path run_dir;
  std::filesystem::path best_checkpoint;
  std::shared_ptr<Model> model;  // best-validation weights
};

// Trains one variant on the train/val records (AIGVDet trains S_spatial and
// S_optical). Each trained model gets its own subdirectory of run_dir named after
// the variant.
std::vector<TrainOutcome> train_variant(const Config& cfg, const Pipeline& pipeline,
                                        const std::vector<VideoRecord>& records, Variant variant,
                                        const std::filesystem::path& run_dir);

// One checkpoint: that model alone. Two: an S_spatial and an S_optical checkpoint
// forming AIGVDet.
ModelBundle load_bundle(const std::vector<std::filesystem::path>& checkpoints);

std::vector<ScoredVideo> score_records(const Pipeline& pipeline, const ModelBundle& bundle,
                                       const std::vector<VideoRecord>& records, const InferenceOptions& opts, int jobs);

// One verdict JSON object per line, in record order.
std::string verdicts_jsonl(const std::vector<ScoredVideo>& scored);

struct EvaluationResult {
  std::vector<ScoredVideo> scored;
  std::vector<EvalReport> reports;  // per subset, then averages, then "All"
};

// Scores the test records and reports per-generator metrics. When out_dir is
// non-empty it receives verdicts.jsonl, report.csv and report.json.
EvaluationResult evaluate_bundle(const Config& cfg, const Pipeline& pipeline, const ModelBundle& bundle,
                                 const std::vector<VideoRecord>& test, const std::vector<std::string>& subsets,
                                 const std::filesystem::path& out_dir);

struct AblationRow {
  Variant variant = Variant::kAIGVDet;
  std::vector<EvalReport> reports;
};

// Trains every trainable variant, assembles AIGVDet from S_spatial and S_optical,
// evaluates all six on the test split and writes ablation.csv / ablation.json.
std::vector<AblationRow> run_ablation(const Config& cfg, const Pipeline& pipeline,
                                      const std::vector<VideoRecord>& records, const std::filesystem::path& run_dir);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct RobustnessResult {
  std::vector<RobustnessPoint> points;
  std::vector<std::vector<VideoRecord>> derived;  // per grid entry, test records after recompression
};

// Recompresses every test video at each CRF in the grid, evaluates each level and
// writes robustness.csv and robustness.png (plus per-level reports) into run_dir.
RobustnessResult run_robustness(const Config& cfg, const Pipeline& pipeline, const ModelBundle& bundle,
                                const std::vector<VideoRecord>& test, const std::vector<int>& grid,
                                const std::filesystem::path& run_dir);

}  // namespace aigvdet
