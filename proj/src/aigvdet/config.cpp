#include "aigvdet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "aigvdet/error.hpp"
#include "aigvdet/rng.hpp"

namespace aigvdet {
namespace {

using nlohmann::json;

const std::map<std::string, json>& defaults() {
  static const std::map<std::string, json> table = {
      {"sampling.frames_per_video", 95},
      {"sampling.strategy", "prefix"},
      {"watermark.bottom_fraction", 0.0},
      {"jpeg_eq.enabled", true},
      {"jpeg_eq.lo", 70},
      {"jpeg_eq.hi", 90},
      {"crop.size", 448},
      {"crop.mode", "center"},
      {"crop.train_mode", "random"},
      {"augment.apply_fraction", 0.10},
      {"augment.blur_sigma", 0.5},
      {"augment.jpeg_quality", 75},
      {"augment.allow_flip", true},
      {"augment.selection", "pick_one"},
      {"augment.flow_full", false},
      {"flow.estimator", "farneback"},
      {"flow.normalization", "per_frame_max"},
      {"flow.fixed_max", 20.0},
      {"flow.raft_model", ""},
      {"model.backbone", "resnet50"},
      {"model.pretrained", ""},
      {"train.lr_init", 1e-4},
      {"train.lr_min", 1e-6},
      {"train.plateau_patience", 5},
      {"train.lr_factor", 10.0},
      {"train.batch_size", 32},
      {"train.seed", 0},
      {"train.max_epochs", 0},
      {"train.weight_decay", 0.0},
      {"train.val_threshold", 0.5},
      {"fusion.alpha", 0.5},
      {"fusion.threshold", 0.1},
      {"fusion.score_all_frames", false},
      {"split.train_n", 500},
      {"split.ratio", 10.0},
      {"split.seed", 0},
      {"split.train_generator", ""},
      {"eval.crf_grid", "0,18,23,28"},
      {"eval.pair_seed", 0},
      {"runtime.jobs", 1},
      {"runtime.cache_root", ""},
      {"runtime.runs_root", "runs"},
  };
  return table;
}

constexpr const char* kGeneratorWatermarkPrefix = "watermark.generator.";

bool is_pattern_key(const std::string& key) {
  return key.rfind(kGeneratorWatermarkPrefix, 0) == 0 && key.size() > std::string(kGeneratorWatermarkPrefix).size();
}

const json& prototype(const std::string& key) {
  static const json kFraction = 0.0;
  if (is_pattern_key(key)) return kFraction;
  auto it = defaults().find(key);
  if (it == defaults().end()) fail(ErrorCode::kValidation, "unknown config key '" + key + "'");
  return it->second;
}

json coerce(const std::string& key, const json& value) {
  const json& proto = prototype(key);
  if (proto.is_boolean()) {
    if (value.is_boolean()) return value;
  } else if (proto.is_number_integer()) {
    if (value.is_number_integer()) return value;
    if (value.is_number_float() && value.get<double>() == static_cast<double>(static_cast<std::int64_t>(value.get<double>())))
      return static_cast<std::int64_t>(value.get<double>());
  } else if (proto.is_number()) {
    if (value.is_number()) return value.get<double>();
  } else if (proto.is_string()) {
    if (value.is_string()) return value;
  }
  fail(ErrorCode::kValidation, fmt::format("config key '{}' expects {}, got {}", key, proto.type_name(), value.dump()));
}

json parse_scalar(const std::string& key, const std::string& text) {
  const json& proto = prototype(key);
  try {
    if (proto.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
    } else if (proto.is_number_integer()) {
      std::size_t pos = 0;
      const long long v = std::stoll(text, &pos);
      if (pos == text.size()) return v;
    } else if (proto.is_number()) {
      std::size_t pos = 0;
      const double v = std::stod(text, &pos);
      if (pos == text.size()) return v;
    } else {
      return text;
    }
  } catch (const std::logic_error&) {
  }
  fail(ErrorCode::kValidation, fmt::format("cannot parse '{}' for config key '{}'", text, key));
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object())
      flatten(v, key, out);
    else
      out.emplace_back(key, v);
  }
}

}  // namespace

bool is_known_config_key(const std::string& key) {
  return is_pattern_key(key) || defaults().count(key) > 0;
}

Config::Config() : values_(json::object()) {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, "config " + path.string() + ": " + e.what());
  }
  require(j.is_object(), ErrorCode::kParse, "config root must be an object");
  Config cfg;
  cfg.merge_json(j);
  return cfg;
}

void Config::merge_json(const json& j) {
  std::vector<std::pair<std::string, json>> flat;
  flatten(j, "", flat);
  for (const auto& [k, v] : flat) set(k, v);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::kValidation,
          "override must look like key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  values_[key] = parse_scalar(key, assignment.substr(eq + 1));
}

void Config::set(const std::string& key, const json& value) { values_[key] = coerce(key, value); }

double Config::get_double(const std::string& key) const { return values_.at(key).get<double>(); }
std::int64_t Config::get_int(const std::string& key) const { return values_.at(key).get<std::int64_t>(); }
bool Config::get_bool(const std::string& key) const { return values_.at(key).get<bool>(); }
std::string Config::get_string(const std::string& key) const { return values_.at(key).get<std::string>(); }

std::vector<int> Config::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::logic_error&) {
      fail(ErrorCode::kValidation, "config key '" + key + "': bad list item '" + item + "'");
    }
  }
  return out;
}

double Config::watermark_fraction(const std::string& generator) const {
  const std::string key = kGeneratorWatermarkPrefix + generator;
  if (values_.contains(key)) return values_.at(key).get<double>();
  return get_double("watermark.bottom_fraction");
}

std::filesystem::path Config::cache_root() const {
  const std::string configured = get_string("runtime.cache_root");
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("AIGVDET_CACHE_ROOT"); env != nullptr && *env != '\0') return env;
  return "cache";
}

std::string Config::snapshot() const { return values_.dump(2); }

std::string Config::hash() const { return fmt::format("{:016x}", fnv1a64(values_.dump())).substr(0, 10); }

}  // namespace aigvdet
