#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace aigvdet {

enum class Label { kReal, kGenerated };
enum class GenType { kT2V, kI2V, kNone };
enum class Container { kMP4, kGIF, kOther };
enum class Split { kUnassigned, kTrain, kVal, kTest };

const char* to_string(Label v);
const char* to_string(GenType v);
const char* to_string(Container v);
const char* to_string(Split v);
Label parse_label(const std::string& s);
GenType parse_gen_type(const std::string& s);
Container parse_container(const std::string& s);
Split parse_split(const std::string& s);

struct VideoRecord {
  std::string id;
  std::filesystem::path path;
  Label label = Label::kReal;
  GenType gen_type = GenType::kNone;
  std::string generator = "none";
  Container container = Container::kMP4;
  int width = 1;
  int height = 1;
  Split split = Split::kUnassigned;

  bool is_generated() const { return label == Label::kGenerated; }
};

// Throws kValidation when a record breaks a label/generator/size invariant.
void validate_record(const VideoRecord& r);

enum class SamplingStrategy { kPrefix, kUniform };

struct SamplingPolicy {
  int frames_per_video = 95;
  SamplingStrategy strategy = SamplingStrategy::kPrefix;
};

SamplingStrategy parse_sampling_strategy(const std::string& s);

// Manifest columns, in order.
inline constexpr const char* kManifestColumns[] = {"id",        "path",  "label", "gen_type", "generator",
                                                   "container", "width", "height", "split"};

// Loads a CSV manifest, or its JSON mirror (array of objects, or {"records": [...]})
// when the file starts with '[' or '{'. Relative paths resolve against the manifest's
// directory. Missing video files are reported as warnings, not errors.
std::vector<VideoRecord> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::vector<VideoRecord>& records, const std::filesystem::path& path);

struct SplitOptions {
  int train_n = 500;      // per class
  double ratio = 10.0;    // train:val
  std::uint64_t seed = 0;
  // When non-empty, only generated records from this generator are eligible for
  // train/val (the rest go to test). Real records are always eligible.
  std::string train_generator;
};

int val_count(int train_n, double ratio);

// Assigns train/val per class and marks everything else test. The split of a record
// depends only on (seed, its id, the eligible id set), never on input order.
std::vector<VideoRecord> make_splits(std::vector<VideoRecord> records, const SplitOptions& opts);

std::vector<int> sample_frame_indices(int total_frames, const SamplingPolicy& policy);

}  // namespace aigvdet
