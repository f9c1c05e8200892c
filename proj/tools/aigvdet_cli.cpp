#include <cstdio>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aigvdet/aigvdet.h"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  int jobs = 0;
  std::string cache_root;
  std::string log_level = "info";
};

struct Options {
  std::string manifest;
  std::string toy_dir;
  int toy_real = 40;
  int toy_generated = 40;
  int toy_size = 64;
  int toy_frames = 30;
  std::uint64_t toy_seed = 0;
  std::string split_out;
  std::string variant = "AIGVDet";
  std::string run_dir;
  std::string video;
  std::vector<std::string> checkpoints;
  std::vector<std::string> subsets;
  double alpha = 0.5;
  double threshold = 0.1;
  bool alpha_given = false;
  bool threshold_given = false;
};

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Prints {"error": ..., "message": ...} to stderr and maps the status to an exit code.
int report(aigv_status status) {
  std::string message = aigv_last_error();
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    if (c == '\n') {
      escaped += "\\n";
      continue;
    }
    escaped += c;
  }
  std::fprintf(stderr, "{\"error\": \"%s\", \"message\": \"%s\"}\n", aigv_status_name(status), escaped.c_str());
  return status == AIGV_ERR_VALIDATION || status == AIGV_ERR_PARSE ? kExitConfig : kExitRuntime;
}

void print_and_free(char* s) {
  if (s == nullptr) return;
  std::cout << s;
  if (*s != '\0' && s[std::char_traits<char>::length(s) - 1] != '\n') std::cout << '\n';
  aigv_free_string(s);
}

class Context {
 public:
  ~Context() { aigv_context_destroy(ctx_); }
  aigv_context* get() const { return ctx_; }

  // Applies the config file, then --set overrides, then the dedicated flags.
  aigv_status init(const Common& c, const Options* o) {
    if (aigv_status s = aigv_context_create(c.config_path.empty() ? nullptr : c.config_path.c_str(), &ctx_); s != AIGV_OK)
      return s == AIGV_ERR_IO ? s : AIGV_ERR_VALIDATION;
    std::vector<std::string> sets = c.overrides;
    if (c.seed >= 0) {
      sets.push_back("train.seed=" + std::to_string(c.seed));
      sets.push_back("split.seed=" + std::to_string(c.seed));
    }
    if (c.jobs > 0) sets.push_back("runtime.jobs=" + std::to_string(c.jobs));
    if (!c.cache_root.empty()) sets.push_back("runtime.cache_root=" + c.cache_root);
    if (o != nullptr && o->alpha_given) sets.push_back("fusion.alpha=" + exact(o->alpha));
    if (o != nullptr && o->threshold_given) sets.push_back("fusion.threshold=" + exact(o->threshold));
    for (const auto& a : sets)
      if (aigv_status s = aigv_context_set(ctx_, a.c_str()); s != AIGV_OK) return AIGV_ERR_VALIDATION;
    return aigv_context_validate(ctx_);
  }

 private:
  aigv_context* ctx_ = nullptr;
};

class Detector {
 public:
  ~Detector() { aigv_detector_close(det_); }
  aigv_detector* get() const { return det_; }
  aigv_status open(aigv_context* ctx, const std::vector<std::string>& paths) {
    std::vector<const char*> raw;
    for (const auto& p : paths) raw.push_back(p.c_str());
    return aigv_detector_open(ctx, raw.data(), raw.size(), &det_);
  }

 private:
  aigv_detector* det_ = nullptr;
};

const char* opt_cstr(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

int run_manifest(const Common& c, const Options& o) {
  if (o.toy_dir.empty() == o.manifest.empty()) {
    std::fprintf(stderr, "manifest: pass exactly one of --toy DIR or --split MANIFEST\n");
    return kExitConfig;
  }
  if (!o.toy_dir.empty()) {
    char* path = nullptr;
    if (aigv_status s = aigv_make_toy_corpus(o.toy_dir.c_str(), o.toy_real, o.toy_generated, o.toy_size, o.toy_size,
                                             o.toy_frames, o.toy_seed, &path);
        s != AIGV_OK)
      return report(s);
    print_and_free(path);
    return 0;
  }
  Context ctx;
  if (aigv_status s = ctx.init(c, nullptr); s != AIGV_OK) return report(s);
  const std::string out = o.split_out.empty() ? o.manifest : o.split_out;
  if (aigv_status s = aigv_manifest_split(ctx.get(), o.manifest.c_str(), out.c_str()); s != AIGV_OK) return report(s);
  std::cout << out << '\n';
  return 0;
}

int run_prepare(const Common& c, const Options& o, bool with_flow) {
  Context ctx;
  if (aigv_status s = ctx.init(c, nullptr); s != AIGV_OK) return report(s);
  if (aigv_status s = aigv_prepare(ctx.get(), o.manifest.c_str(), with_flow ? 1 : 0); s != AIGV_OK) return report(s);
  return 0;
}

int run_train(const Common& c, const Options& o) {
  Context ctx;
  if (aigv_status s = ctx.init(c, nullptr); s != AIGV_OK) return report(s);
  char* json = nullptr;
  if (aigv_status s = aigv_train(ctx.get(), o.manifest.c_str(), o.variant.c_str(), opt_cstr(o.run_dir), &json);
      s != AIGV_OK)
    return report(s);
  print_and_free(json);
  return 0;
}

int run_infer(const Common& c, const Options& o) {
  Context ctx;
  if (aigv_status s = ctx.init(c, &o); s != AIGV_OK) return report(s);
  Detector det;
  if (aigv_status s = det.open(ctx.get(), o.checkpoints); s != AIGV_OK) return report(s);
  char* json = nullptr;
  if (aigv_status s = aigv_detector_infer(det.get(), o.video.c_str(), &json); s != AIGV_OK) return report(s);
  print_and_free(json);
  return 0;
}

int run_eval(const Common& c, const Options& o) {
  Context ctx;
  if (aigv_status s = ctx.init(c, &o); s != AIGV_OK) return report(s);
  Detector det;
  if (aigv_status s = det.open(ctx.get(), o.checkpoints); s != AIGV_OK) return report(s);
  std::vector<const char*> subsets;
  for (const auto& s : o.subsets) subsets.push_back(s.c_str());
  char* csv = nullptr;
  if (aigv_status s = aigv_evaluate(det.get(), o.manifest.c_str(), subsets.empty() ? nullptr : subsets.data(),
                                    subsets.size(), opt_cstr(o.run_dir), &csv);
      s != AIGV_OK)
    return report(s);
  print_and_free(csv);
  return 0;
}

int run_ablate(const Common& c, const Options& o) {
  Context ctx;
  if (aigv_status s = ctx.init(c, nullptr); s != AIGV_OK) return report(s);
  char* csv = nullptr;
  if (aigv_status s = aigv_ablate(ctx.get(), o.manifest.c_str(), opt_cstr(o.run_dir), &csv); s != AIGV_OK)
    return report(s);
  print_and_free(csv);
  return 0;
}

int run_robustness(const Common& c, const Options& o) {
  Context ctx;
  if (aigv_status s = ctx.init(c, nullptr); s != AIGV_OK) return report(s);
  Detector det;
  if (aigv_status s = det.open(ctx.get(), o.checkpoints); s != AIGV_OK) return report(s);
  char* csv = nullptr;
  if (aigv_status s = aigv_robustness(det.get(), o.manifest.c_str(), opt_cstr(o.run_dir), &csv); s != AIGV_OK)
    return report(s);
  print_and_free(csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detects AI-generated videos from frame appearance and optical-flow motion cues."};
  app.require_subcommand(1);
  app.set_version_flag("--version", aigv_version());
  Common common;
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "Override a setting (key=value); repeatable");
    sub->add_option("--seed", common.seed, "Seed for training and splitting");
    sub->add_option("--jobs", common.jobs, "Worker threads for per-video work")->check(CLI::PositiveNumber);
    sub->add_option("--cache-root", common.cache_root, "Frame and flow cache directory");
    sub->add_option("--log-level", common.log_level, "trace, debug, info, warn, error or off");
  };

  auto* manifest = app.add_subcommand("manifest", "Generate a toy corpus or assign train/val/test splits");
  add_common(manifest);
  manifest->add_option("--toy", o.toy_dir, "Write a synthetic corpus into this directory");
  manifest->add_option("--toy-real", o.toy_real, "Real clips in the toy corpus")->check(CLI::PositiveNumber);
  manifest->add_option("--toy-generated", o.toy_generated, "Generated clips in the toy corpus")
      ->check(CLI::PositiveNumber);
  manifest->add_option("--toy-size", o.toy_size, "Toy frame width and height")->check(CLI::PositiveNumber);
  manifest->add_option("--toy-frames", o.toy_frames, "Frames per toy clip")->check(CLI::PositiveNumber);
  manifest->add_option("--toy-seed", o.toy_seed, "Toy corpus seed");
  manifest->add_option("--split", o.manifest, "Manifest whose records get split assignments")
      ->check(CLI::ExistingFile);
  manifest->add_option("--out", o.split_out, "Where to write the split manifest (default: in place)");

  auto* prep = app.add_subcommand("prep", "Sample, crop and cache frames");
  add_common(prep);
  prep->add_option("--manifest", o.manifest, "Video manifest")->required()->check(CLI::ExistingFile);

  auto* flow = app.add_subcommand("flow", "Cache frames and optical-flow maps");
  add_common(flow);
  flow->add_option("--manifest", o.manifest, "Video manifest")->required()->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "Train a variant on the train/val split");
  add_common(train);
  train->add_option("--manifest", o.manifest, "Split manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--variant", o.variant, "S_spatial, S_optical, S_optical_no_cp, FF_concat, FF_add or AIGVDet");
  train->add_option("--run-dir", o.run_dir, "Output directory (default: a new run directory)");

  auto* infer = app.add_subcommand("infer", "Score one video and print its verdict as JSON");
  add_common(infer);
  infer->add_option("--video", o.video, "Video file")->required()->check(CLI::ExistingFile);
  infer->add_option("--checkpoints", o.checkpoints, "One checkpoint, or spatial then flow checkpoints")
      ->required()
      ->expected(1, 2);
  auto* infer_alpha = infer->add_option("--alpha", o.alpha, "Weight of the spatial branch in (0,1)");
  auto* infer_threshold = infer->add_option("--threshold", o.threshold, "Decision threshold on the video probability");

  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on the test split");
  add_common(eval);
  eval->add_option("--manifest", o.manifest, "Split manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoints", o.checkpoints, "One checkpoint, or spatial then flow checkpoints")
      ->required()
      ->expected(1, 2);
  eval->add_option("--subset", o.subsets, "Generator to report; repeatable (default: all)");
  auto* eval_alpha = eval->add_option("--alpha", o.alpha, "Weight of the spatial branch in (0,1)");
  auto* eval_threshold = eval->add_option("--threshold", o.threshold, "Decision threshold");
  eval->add_option("--run-dir", o.run_dir, "Output directory (default: a new run directory)");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate all six variants");
  add_common(ablate);
  ablate->add_option("--manifest", o.manifest, "Split manifest")->required()->check(CLI::ExistingFile);
  ablate->add_option("--run-dir", o.run_dir, "Output directory (default: a new run directory)");

  auto* robust = app.add_subcommand("robustness", "Sweep H.264 CRF levels over the test split");
  add_common(robust);
  robust->add_option("--manifest", o.manifest, "Split manifest")->required()->check(CLI::ExistingFile);
  robust->add_option("--checkpoints", o.checkpoints, "One checkpoint, or spatial then flow checkpoints")
      ->required()
      ->expected(1, 2);
  robust->add_option("--run-dir", o.run_dir, "Output directory (default: a new run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << '\n' << app.help();
    return kExitConfig;
  }

  o.alpha_given = infer_alpha->count() > 0 || eval_alpha->count() > 0;
  o.threshold_given = infer_threshold->count() > 0 || eval_threshold->count() > 0;
  if (aigv_status s = aigv_set_log_level(common.log_level.c_str()); s != AIGV_OK) {
    report(s);
    return kExitConfig;
  }
  if (*manifest) return run_manifest(common, o);
  if (*prep) return run_prepare(common, o, false);
  if (*flow) return run_prepare(common, o, true);
  if (*train) return run_train(common, o);
  if (*infer) return run_infer(common, o);
  if (*eval) return run_eval(common, o);
  if (*ablate) return run_ablate(common, o);
  if (*robust) return run_robustness(common, o);
  return kExitConfig;
}
