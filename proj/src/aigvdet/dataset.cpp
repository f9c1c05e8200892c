#include "aigvdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "aigvdet/csv.hpp"
#include "aigvdet/error.hpp"
#include "aigvdet/rng.hpp"

namespace aigvdet {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

int parse_dimension(const std::string& s, const char* what, const std::string& id) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  fail(ErrorCode::kParse, fmt::format("record '{}': {} '{}' is not an integer", id, what, s));
}

VideoRecord record_from_fields(const std::vector<std::string>& f) {
  VideoRecord r;
  r.id = f[0];
  r.path = f[1];
  r.label = parse_label(f[2]);
  r.gen_type = parse_gen_type(f[3]);
  r.generator = f[4];
  r.container = parse_container(f[5]);
  r.width = parse_dimension(f[6], "width", r.id);
  r.height = parse_dimension(f[7], "height", r.id);
  r.split = parse_split(f[8]);
  return r;
}

std::string field_string(const nlohmann::json& obj, const char* key) {
  require(obj.contains(key), ErrorCode::kParse, fmt::format("manifest object missing field '{}'", key));
  const auto& v = obj.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_null()) return "";
  fail(ErrorCode::kParse, fmt::format("manifest field '{}' has unsupported type", key));
}

std::vector<VideoRecord> parse_json_manifest(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("manifest JSON: ") + e.what());
  }
  if (j.is_object() && j.contains("records")) j = j.at("records");
  require(j.is_array(), ErrorCode::kParse, "manifest JSON must be an array of records");
  std::vector<VideoRecord> out;
  for (const auto& obj : j) {
    require(obj.is_object(), ErrorCode::kParse, "manifest JSON entries must be objects");
    std::vector<std::string> fields;
    for (const char* col : kManifestColumns) {
      if (std::string(col) == "split" && !obj.contains("split"))
        fields.emplace_back();
      else
        fields.push_back(field_string(obj, col));
    }
    out.push_back(record_from_fields(fields));
  }
  return out;
}

std::vector<VideoRecord> parse_csv_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> fields;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kParse, "manifest is empty");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  require(csv::split_line(line, fields), ErrorCode::kParse, "manifest header: unterminated quote");
  const std::vector<std::string> expected(std::begin(kManifestColumns), std::end(kManifestColumns));
  if (fields != expected) {
    fail(ErrorCode::kParse, "manifest header must be exactly id,path,label,gen_type,generator,container,width,height,split");
  }
  std::vector<VideoRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!csv::split_line(line, fields)) fail(ErrorCode::kParse, fmt::format("manifest line {}: unterminated quote", line_no));
    if (fields.size() == 8) fields.emplace_back();  // split column left off entirely
    if (fields.size() != 9) {
      fail(ErrorCode::kParse, fmt::format("manifest line {}: expected 9 columns, got {}", line_no, fields.size()));
    }
    try {
      out.push_back(record_from_fields(fields));
    } catch (const Error& e) {
      fail(e.code(), fmt::format("manifest line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

}  // namespace

const char* to_string(Label v) { return v == Label::kReal ? "real" : "generated"; }

const char* to_string(GenType v) {
  switch (v) {
    case GenType::kT2V: return "T2V";
    case GenType::kI2V: return "I2V";
    case GenType::kNone: return "none";
  }
  return "none";
}

const char* to_string(Container v) {
  switch (v) {
    case Container::kMP4: return "MP4";
    case Container::kGIF: return "GIF";
    case Container::kOther: return "other";
  }
  return "other";
}

const char* to_string(Split v) {
  switch (v) {
    case Split::kUnassigned: return "";
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "";
}

Label parse_label(const std::string& s) {
  const auto v = lower(s);
  if (v == "real") return Label::kReal;
  if (v == "generated" || v == "fake") return Label::kGenerated;
  fail(ErrorCode::kParse, "bad label '" + s + "'");
}

GenType parse_gen_type(const std::string& s) {
  const auto v = lower(s);
  if (v == "t2v") return GenType::kT2V;
  if (v == "i2v") return GenType::kI2V;
  if (v == "none" || v.empty()) return GenType::kNone;
  fail(ErrorCode::kParse, "bad gen_type '" + s + "'");
}

Container parse_container(const std::string& s) {
  const auto v = lower(s);
  if (v == "mp4") return Container::kMP4;
  if (v == "gif") return Container::kGIF;
  if (v == "other") return Container::kOther;
  fail(ErrorCode::kParse, "bad container '" + s + "'");
}

Split parse_split(const std::string& s) {
  const auto v = lower(s);
  if (v.empty()) return Split::kUnassigned;
  if (v == "train") return Split::kTrain;
  if (v == "val") return Split::kVal;
  if (v == "test") return Split::kTest;
  fail(ErrorCode::kParse, "bad split '" + s + "'");
}

SamplingStrategy parse_sampling_strategy(const std::string& s) {
  if (s == "prefix") return SamplingStrategy::kPrefix;
  if (s == "uniform") return SamplingStrategy::kUniform;
  fail(ErrorCode::kValidation, "bad sampling strategy '" + s + "'");
}

void validate_record(const VideoRecord& r) {
  require(!r.id.empty(), ErrorCode::kValidation, "record with empty id");
  if (r.label == Label::kReal) {
    require(r.generator == "none" && r.gen_type == GenType::kNone, ErrorCode::kValidation,
            fmt::format("record '{}': real videos must have generator=none and gen_type=none (got {}, {})", r.id,
                        r.generator, to_string(r.gen_type)));
  } else {
    require(!r.generator.empty() && r.generator != "none", ErrorCode::kValidation,
            fmt::format("record '{}': generated videos need a generator name", r.id));
    require(r.gen_type != GenType::kNone, ErrorCode::kValidation,
            fmt::format("record '{}': generated videos need gen_type T2V or I2V", r.id));
  }
  require(r.width >= 1 && r.height >= 1, ErrorCode::kValidation,
          fmt::format("record '{}': width and height must be >= 1", r.id));
}

std::vector<VideoRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open manifest " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool is_json = first != std::string::npos && (text[first] == '[' || text[first] == '{');
  auto records = is_json ? parse_json_manifest(text) : parse_csv_manifest(text);

  std::set<std::string> seen;
  const auto base = path.parent_path();
  for (auto& r : records) {
    validate_record(r);
    require(seen.insert(r.id).second, ErrorCode::kValidation, "duplicate record id '" + r.id + "'");
    if (r.path.is_relative()) r.path = base / r.path;
    if (!std::filesystem::exists(r.path)) spdlog::warn("manifest record '{}': file {} not found", r.id, r.path.string());
  }
  return records;
}

namespace {

// Paths under the manifest's directory are written relative to it.
std::string stored_path(const std::filesystem::path& video, const std::filesystem::path& manifest) {
  const auto base = std::filesystem::absolute(manifest).parent_path().lexically_normal();
  const auto rel = std::filesystem::absolute(video).lexically_normal().lexically_relative(base);
  if (rel.empty() || *rel.begin() == "..") return video.string();
  return rel.generic_string();
}

}  // namespace

void save_manifest(const std::vector<VideoRecord>& records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write manifest " + path.string());
  if (path.extension() == ".json") {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records) {
      arr.push_back({{"id", r.id},
                     {"path", stored_path(r.path, path)},
                     {"label", to_string(r.label)},
                     {"gen_type", to_string(r.gen_type)},
                     {"generator", r.generator},
                     {"container", to_string(r.container)},
                     {"width", r.width},
                     {"height", r.height},
                     {"split", to_string(r.split)}});
    }
    out << arr.dump(2) << "\n";
    return;
  }
  out << "id,path,label,gen_type,generator,container,width,height,split\n";
  for (const auto& r : records) {
    out << csv::escape(r.id) << ',' << csv::escape(stored_path(r.path, path)) << ',' << to_string(r.label) << ','
        << to_string(r.gen_type) << ',' << csv::escape(r.generator) << ',' << to_string(r.container) << ',' << r.width
        << ',' << r.height << ',' << to_string(r.split) << '\n';
  }
}

int val_count(int train_n, double ratio) {
  require(ratio > 0.0, ErrorCode::kInvalidArgument, "split ratio must be positive");
  return static_cast<int>(std::lround(train_n / ratio));
}

std::vector<VideoRecord> make_splits(std::vector<VideoRecord> records, const SplitOptions& opts) {
  require(opts.train_n >= 0, ErrorCode::kInvalidArgument, "train_n must be non-negative");
  const int n_val = val_count(opts.train_n, opts.ratio);
  for (auto& r : records) r.split = Split::kTest;

  for (Label cls : {Label::kReal, Label::kGenerated}) {
    std::vector<std::pair<std::uint64_t, std::size_t>> eligible;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.label != cls) continue;
      if (cls == Label::kGenerated && !opts.train_generator.empty() && r.generator != opts.train_generator) continue;
      eligible.emplace_back(derive_seed(opts.seed, r.id), i);
    }
    if (static_cast<int>(eligible.size()) < opts.train_n + n_val) {
      fail(ErrorCode::kInsufficientData,
           fmt::format("need {} train + {} val {} records, only {} available", opts.train_n, n_val, to_string(cls),
                       eligible.size()));
    }
    // Ties on the hash are broken by id so the order never depends on input order.
    std::sort(eligible.begin(), eligible.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return records[a.second].id < records[b.second].id;
    });
    for (std::size_t k = 0; k < eligible.size(); ++k) {
      const int rank = static_cast<int>(k);
      records[eligible[k].second].split = rank < opts.train_n ? Split::kTrain
                                          : rank < opts.train_n + n_val ? Split::kVal
                                                                         : Split::kTest;
    }
  }
  return records;
}

std::vector<int> sample_frame_indices(int total_frames, const SamplingPolicy& policy) {
  require(total_frames >= 2, ErrorCode::kInsufficientData,
          fmt::format("need at least 2 frames to derive a flow map, got {}", total_frames));
  require(policy.frames_per_video >= 2, ErrorCode::kInvalidArgument, "frames_per_video must be >= 2");
  const int k = std::min(policy.frames_per_video, total_frames);
  std::vector<int> out(static_cast<std::size_t>(k));
  if (policy.strategy == SamplingStrategy::kPrefix) {
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = i;
  } else {
    const std::int64_t span = total_frames - 1;
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(i * span / (k - 1));
  }
  return out;
}

}  // namespace aigvdet
