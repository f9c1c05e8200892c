#ifndef AIGVDET_AIGVDET_H
#define AIGVDET_AIGVDET_H

#include <stddef.h>
#include <stdint.h>

#if defined(AIGVDET_BUILDING_LIBRARY)
#define AIGV_API __attribute__((visibility("default")))
#else
#define AIGV_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum aigv_status {
  AIGV_OK = 0,
  AIGV_ERR_INVALID_ARGUMENT = 1,
  AIGV_ERR_PARSE = 2,
  AIGV_ERR_VALIDATION = 3,
  AIGV_ERR_IO = 4,
  AIGV_ERR_DECODE = 5,
  AIGV_ERR_ENCODE = 6,
  AIGV_ERR_SHAPE = 7,
  AIGV_ERR_BACKEND_UNAVAILABLE = 8,
  AIGV_ERR_INSUFFICIENT_DATA = 9,
  AIGV_ERR_CACHE_CORRUPT = 10,
  AIGV_ERR_NUMERICAL = 11,
  AIGV_ERR_RUNTIME = 12
} aigv_status;

/* Effective configuration plus the preprocessing caches built from it. */
typedef struct aigv_context aigv_context;
/* Loaded checkpoints ready to score videos under a context's configuration. */
typedef struct aigv_detector aigv_detector;

AIGV_API const char* aigv_version(void);
AIGV_API const char* aigv_status_name(aigv_status status);
/* Message of the last failed call on this thread ("" after a success). */
AIGV_API const char* aigv_last_error(void);
/* Releases any string returned through a char** out-parameter. */
AIGV_API void aigv_free_string(char* s);
/* "trace", "debug", "info", "warn", "error" or "off". */
AIGV_API aigv_status aigv_set_log_level(const char* level);

/* config_path may be NULL for the built-in defaults. */
AIGV_API aigv_status aigv_context_create(const char* config_path, aigv_context** out);
AIGV_API void aigv_context_destroy(aigv_context* ctx);
/* "key=value"; unknown keys and unparsable values are rejected. */
AIGV_API aigv_status aigv_context_set(aigv_context* ctx, const char* assignment);
/* Checks every option; returns AIGV_ERR_VALIDATION or AIGV_ERR_PARSE on bad settings. */
AIGV_API aigv_status aigv_context_validate(const aigv_context* ctx);
/* Canonical JSON of the effective configuration. */
AIGV_API aigv_status aigv_context_config_json(const aigv_context* ctx, char** out_json);
/* Creates <runtime.runs_root>/<timestamp>-<config hash>/ holding config.snapshot. */
AIGV_API aigv_status aigv_create_run_dir(const aigv_context* ctx, char** out_path);

/* Synthetic corpus: one MP4 per clip under <out_dir>/videos plus <out_dir>/manifest.csv. */
AIGV_API aigv_status aigv_make_toy_corpus(const char* out_dir, int n_real, int n_generated, int width, int height,
                                          int frames, uint64_t seed, char** out_manifest_path);
/* Assigns train/val/test with the split.* settings and writes manifest_out. */
AIGV_API aigv_status aigv_manifest_split(const aigv_context* ctx, const char* manifest_in, const char* manifest_out);
/* Number of records in a manifest (validates every row). */
AIGV_API aigv_status aigv_manifest_count(const char* manifest, size_t* out_count);

/* Fills the frame caches (and flow caches when with_flow != 0) for every record. */
AIGV_API aigv_status aigv_prepare(aigv_context* ctx, const char* manifest, int with_flow);

/* Trains `variant` on the manifest's train/val records inside run_dir (NULL: a new
   run directory). out_json lists the checkpoints and final training state. */
AIGV_API aigv_status aigv_train(aigv_context* ctx, const char* manifest, const char* variant, const char* run_dir,
                                char** out_json);

/* One checkpoint scores that variant alone; two (spatial, flow) form AIGVDet. */
AIGV_API aigv_status aigv_detector_open(aigv_context* ctx, const char* const* checkpoints, size_t n_checkpoints,
                                        aigv_detector** out);
AIGV_API void aigv_detector_close(aigv_detector* det);
AIGV_API aigv_status aigv_detector_variant(const aigv_detector* det, char** out_name);
/* Scores one video file; out_json is a single verdict object. */
AIGV_API aigv_status aigv_detector_infer(aigv_detector* det, const char* video_path, char** out_json);

/* Scores the manifest's test records (every record when none is assigned a split)
   and writes verdicts.jsonl, report.csv and report.json into out_dir. subsets may be
   NULL to report every generator. out_csv receives the report CSV. */
AIGV_API aigv_status aigv_evaluate(aigv_detector* det, const char* manifest, const char* const* subsets,
                                   size_t n_subsets, const char* out_dir, char** out_csv);

/* Trains and evaluates all six variants; out_csv receives ablation.csv. */
AIGV_API aigv_status aigv_ablate(aigv_context* ctx, const char* manifest, const char* run_dir, char** out_csv);

/* CRF sweep over the test records using eval.crf_grid; out_csv receives robustness.csv. */
AIGV_API aigv_status aigv_robustness(aigv_detector* det, const char* manifest, const char* run_dir, char** out_csv);

/* alpha * p_spatial + (1 - alpha) * p_flow with argument checks. */
AIGV_API aigv_status aigv_fuse_frame(double p_spatial, double p_flow, double alpha, double* out);
/* labels: 1 generated, 0 real. */
AIGV_API aigv_status aigv_auc(const double* scores, const int* labels, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif
