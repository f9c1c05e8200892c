#include "aigvdet/aigvdet.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

#include <spdlog/spdlog.h>

#include "aigvdet/config.hpp"
#include "aigvdet/dataset.hpp"
#include "aigvdet/error.hpp"
#include "aigvdet/evaluate.hpp"
#include "aigvdet/fusion.hpp"
#include "aigvdet/pipeline.hpp"
#include "aigvdet/toy_corpus.hpp"
#include "aigvdet/workflow.hpp"

using namespace aigvdet;

struct aigv_context {
  Config cfg;
  std::unique_ptr<Pipeline> pipeline;

  // Rebuilt after every configuration change so caches always follow the current settings.
  Pipeline& get_pipeline() {
    if (!pipeline) pipeline = std::make_unique<Pipeline>(cfg);
    return *pipeline;
  }
};

struct aigv_detector {
  Config cfg;
  std::unique_ptr<Pipeline> pipeline;
  ModelBundle bundle;
};

namespace {

thread_local std::string g_last_error;

aigv_status to_status(ErrorCode code) { return static_cast<aigv_status>(static_cast<int>(code)); }

template <typename F>
aigv_status guarded(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return AIGV_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return AIGV_ERR_RUNTIME;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return AIGV_ERR_RUNTIME;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) fail(ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_out(char** out, const std::string& s) {
  if (out != nullptr) *out = dup_string(s);
}

std::filesystem::path run_dir_or_new(const Config& cfg, const char* run_dir) {
  if (run_dir == nullptr || *run_dir == '\0') return create_run_dir(cfg);
  std::filesystem::path dir = run_dir;
  std::filesystem::create_directories(dir);
  if (!std::filesystem::exists(dir / "config.snapshot")) {
    const std::string snap = cfg.snapshot();
    write_bytes_atomic(dir / "config.snapshot", std::vector<std::uint8_t>(snap.begin(), snap.end()));
  }
  return dir;
}

// Test records, or every record when the manifest carries no split assignment at all.
std::vector<VideoRecord> evaluation_records(const std::vector<VideoRecord>& records) {
  auto test = records_in(records, Split::kTest);
  if (!test.empty()) return test;
  for (const auto& r : records)
    if (r.split != Split::kUnassigned) fail(ErrorCode::kInsufficientData, "the manifest has no test records");
  return records;
}

}  // namespace

extern "C" {

const char* aigv_version(void) { return "0.1.0"; }

const char* aigv_status_name(aigv_status status) {
  if (status == AIGV_OK) return "ok";
  return error_code_name(static_cast<ErrorCode>(status));
}

const char* aigv_last_error(void) { return g_last_error.c_str(); }

void aigv_free_string(char* s) { std::free(s); }

aigv_status aigv_set_log_level(const char* level) {
  return guarded([&] {
    need(level, "level");
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::strcmp(level, "off") != 0)
      fail(ErrorCode::kInvalidArgument, std::string("unknown log level: ") + level);
    spdlog::set_level(parsed);
  });
}

aigv_status aigv_context_create(const char* config_path, aigv_context** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    auto ctx = std::make_unique<aigv_context>();
    if (config_path != nullptr && *config_path != '\0') ctx->cfg = Config::from_file(config_path);
    *out = ctx.release();
  });
}

void aigv_context_destroy(aigv_context* ctx) { delete ctx; }

aigv_status aigv_context_set(aigv_context* ctx, const char* assignment) {
  return guarded([&] {
    need(ctx, "ctx");
    need(assignment, "assignment");
    ctx->cfg.apply_override(assignment);
    ctx->pipeline.reset();
  });
}

aigv_status aigv_context_validate(const aigv_context* ctx) {
  return guarded([&] {
    need(ctx, "ctx");
    validate_config(ctx->cfg);
  });
}

aigv_status aigv_context_config_json(const aigv_context* ctx, char** out_json) {
  return guarded([&] {
    need(ctx, "ctx");
    need(out_json, "out_json");
    *out_json = dup_string(ctx->cfg.snapshot());
  });
}

aigv_status aigv_create_run_dir(const aigv_context* ctx, char** out_path) {
  return guarded([&] {
    need(ctx, "ctx");
    need(out_path, "out_path");
    *out_path = dup_string(create_run_dir(ctx->cfg).string());
  });
}

aigv_status aigv_make_toy_corpus(const char* out_dir, int n_real, int n_generated, int width, int height, int frames,
                                 uint64_t seed, char** out_manifest_path) {
  return guarded([&] {
    need(out_dir, "out_dir");
    ToyCorpusOptions opts;
    opts.n_real = n_real;
    opts.n_generated = n_generated;
    opts.width = width;
    opts.height = height;
    opts.frames = frames;
    opts.seed = seed;
    make_toy_corpus(out_dir, opts);
    set_out(out_manifest_path, (std::filesystem::path(out_dir) / "manifest.csv").string());
  });
}

aigv_status aigv_manifest_split(const aigv_context* ctx, const char* manifest_in, const char* manifest_out) {
  return guarded([&] {
    need(ctx, "ctx");
    need(manifest_in, "manifest_in");
    need(manifest_out, "manifest_out");
    validate_config(ctx->cfg);
    save_manifest(make_splits(load_manifest(manifest_in), split_options_from(ctx->cfg)), manifest_out);
  });
}

aigv_status aigv_manifest_count(const char* manifest, size_t* out_count) {
  return guarded([&] {
    need(manifest, "manifest");
    need(out_count, "out_count");
    *out_count = load_manifest(manifest).size();
  });
}

aigv_status aigv_prepare(aigv_context* ctx, const char* manifest, int with_flow) {
  return guarded([&] {
    need(ctx, "ctx");
    need(manifest, "manifest");
    validate_config(ctx->cfg);
    prepare_records(ctx->get_pipeline(), load_manifest(manifest), with_flow != 0,
                    static_cast<int>(ctx->cfg.get_int("runtime.jobs")));
  });
}

aigv_status aigv_train(aigv_context* ctx, const char* manifest, const char* variant, const char* run_dir,
                       char** out_json) {
  return guarded([&] {
    need(ctx, "ctx");
    need(manifest, "manifest");
    need(variant, "variant");
    validate_config(ctx->cfg);
    const Variant v = parse_variant(variant);
    const auto dir = run_dir_or_new(ctx->cfg, run_dir);
    const auto outcomes = train_variant(ctx->cfg, ctx->get_pipeline(), load_manifest(manifest), v, dir);
    nlohmann::ordered_json j;
    j["run_dir"] = dir.string();
    j["models"] = nlohmann::ordered_json::array();
    for (const auto& o : outcomes) {
      j["models"].push_back({{"variant", to_string(o.variant)},
                             {"checkpoint", o.best_checkpoint.string()},
                             {"epochs", o.state.epoch},
                             {"best_epoch", o.state.best_epoch},
                             {"best_val_acc", o.state.best_val_acc},
                             {"final_lr", o.state.lr},
                             {"stop_reason", o.state.stop_reason}});
    }
    set_out(out_json, j.dump(2));
  });
}

aigv_status aigv_detector_open(aigv_context* ctx, const char* const* checkpoints, size_t n_checkpoints,
                               aigv_detector** out) {
  return guarded([&] {
    need(ctx, "ctx");
    need(out, "out");
    *out = nullptr;
    need(checkpoints, "checkpoints");
    validate_config(ctx->cfg);
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < n_checkpoints; ++i) {
      need(checkpoints[i], "checkpoint path");
      paths.emplace_back(checkpoints[i]);
    }
    auto det = std::make_unique<aigv_detector>();
    det->cfg = ctx->cfg;
    det->bundle = load_bundle(paths);
    det->pipeline = std::make_unique<Pipeline>(det->cfg);
    *out = det.release();
  });
}

void aigv_detector_close(aigv_detector* det) { delete det; }

aigv_status aigv_detector_variant(const aigv_detector* det, char** out_name) {
  return guarded([&] {
    need(det, "det");
    need(out_name, "out_name");
    *out_name = dup_string(to_string(det->bundle.variant));
  });
}

aigv_status aigv_detector_infer(aigv_detector* det, const char* video_path, char** out_json) {
  return guarded([&] {
    need(det, "det");
    need(video_path, "video_path");
    need(out_json, "out_json");
    const auto verdict =
        infer_video(*det->pipeline, det->bundle, record_for_file(video_path), inference_options_from(det->cfg));
    *out_json = dup_string(to_json(verdict).dump());
  });
}

aigv_status aigv_evaluate(aigv_detector* det, const char* manifest, const char* const* subsets, size_t n_subsets,
                          const char* out_dir, char** out_csv) {
  return guarded([&] {
    need(det, "det");
    need(manifest, "manifest");
    std::vector<std::string> names;
    if (subsets != nullptr)
      for (size_t i = 0; i < n_subsets; ++i) {
        need(subsets[i], "subset name");
        names.emplace_back(subsets[i]);
      }
    const auto dir = run_dir_or_new(det->cfg, out_dir);
    const auto result = evaluate_bundle(det->cfg, *det->pipeline, det->bundle,
                                        evaluation_records(load_manifest(manifest)), names, dir);
    set_out(out_csv, report_csv(result.reports));
  });
}

aigv_status aigv_ablate(aigv_context* ctx, const char* manifest, const char* run_dir, char** out_csv) {
  return guarded([&] {
    need(ctx, "ctx");
    need(manifest, "manifest");
    validate_config(ctx->cfg);
    const auto dir = run_dir_or_new(ctx->cfg, run_dir);
    const auto rows = run_ablation(ctx->cfg, ctx->get_pipeline(), load_manifest(manifest), dir);
    set_out(out_csv, ablation_csv(rows));
  });
}

aigv_status aigv_robustness(aigv_detector* det, const char* manifest, const char* run_dir, char** out_csv) {
  return guarded([&] {
    need(det, "det");
    need(manifest, "manifest");
    const auto dir = run_dir_or_new(det->cfg, run_dir);
    const auto result = run_robustness(det->cfg, *det->pipeline, det->bundle,
                                       evaluation_records(load_manifest(manifest)),
                                       det->cfg.get_int_list("eval.crf_grid"), dir);
    set_out(out_csv, robustness_csv(result.points));
  });
}

aigv_status aigv_fuse_frame(double p_spatial, double p_flow, double alpha, double* out) {
  return guarded([&] {
    need(out, "out");
    *out = fuse_frame(p_spatial, p_flow, alpha);
  });
}

aigv_status aigv_auc(const double* scores, const int* labels, size_t n, double* out) {
  return guarded([&] {
    need(out, "out");
    if (n > 0) {
      need(scores, "scores");
      need(labels, "labels");
    }
    std::vector<std::pair<double, Label>> pairs;
    pairs.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      if (labels[i] != 0 && labels[i] != 1) fail(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
      pairs.emplace_back(scores[i], labels[i] == 1 ? Label::kGenerated : Label::kReal);
    }
    *out = auc(pairs);
  });
}

}  // extern "C"
