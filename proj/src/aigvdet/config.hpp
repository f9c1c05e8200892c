#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace aigvdet {

// Flat dotted-key configuration with typed defaults. Keys outside the registry
// are rejected so a typo never silently falls back to a default.
class Config {
 public:
  Config();

  static Config from_file(const std::filesystem::path& path);

  // Accepts nested objects ({"crop": {"size": 448}}) or flat dotted keys.
  void merge_json(const nlohmann::json& j);
  // "key=value"; the value is parsed according to the key's registered type.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const nlohmann::json& value);

  bool has(const std::string& key) const { return values_.contains(key); }
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Per-generator bottom crop, falling back to watermark.bottom_fraction.
  double watermark_fraction(const std::string& generator) const;
  std::filesystem::path cache_root() const;

  // Canonical JSON (sorted keys) of the effective configuration.
  std::string snapshot() const;
  // Short hex digest of snapshot().
  std::string hash() const;

  const nlohmann::json& values() const { return values_; }

 private:
  nlohmann::json values_;
};

bool is_known_config_key(const std::string& key);

}  // namespace aigvdet
