#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aigvdet/image.hpp"
#include "aigvdet/model.hpp"
#include "aigvdet/preprocess.hpp"

namespace aigvdet {

inline constexpr double kBceEpsilon = 1e-7;

// -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps].
double bce_loss(double p, int y);

struct LogitLoss {
  double loss = 0.0;
  double grad = 0.0;  // d loss / d logit
};
// Binary cross-entropy of sigmoid(z) against y, in the overflow-free log-sigmoid form.
LogitLoss bce_with_logit(double z, int y);

// Reduce-on-plateau schedule over validation accuracy. The first observation always
// counts as an improvement. After `patience` consecutive epochs without a strict
// improvement the rate is divided by `factor`; if that division would take it below
// `lr_min`, training terminates instead.
class PlateauSchedule {
 public:
  enum class Action { kContinue, kReduced, kTerminate };

  PlateauSchedule(double lr_init, double lr_min, int patience, double factor);
  Action observe(double val_acc);

  double lr() const { return lr_; }
  int reductions() const { return reductions_; }
  int epochs_since_improve() const { return since_improve_; }
  double best() const { return best_; }
  bool improved_last() const { return improved_last_; }
  bool terminated() const { return terminated_; }

 private:
  double lr_init_, lr_min_, factor_;
  int patience_;
  double lr_;
  int reductions_ = 0;
  int since_improve_ = 0;
  double best_ = 0.0;
  bool seen_ = false;
  bool improved_last_ = false;
  bool terminated_ = false;
};

// Per-video access to training inputs. Frames are watermark-cropped (and
// JPEG-equalized where that applies) but not yet cropped to the model size.
class TrainingSource {
 public:
  virtual ~TrainingSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::string id(std::size_t v) const = 0;
  virtual int label(std::size_t v) const = 0;
  virtual int frame_count(std::size_t v) const = 0;
  virtual int flow_count(std::size_t v) const = 0;
  virtual RgbImage frame(std::size_t v, int i) const = 0;
  virtual RgbImage flow(std::size_t v, int i) const = 0;
};

struct TrainingVideo {
  std::string id;
  int label = 0;
  std::vector<RgbImage> frames;
  std::vector<RgbImage> flows;
};

class InMemorySource final : public TrainingSource {
 public:
  explicit InMemorySource(std::vector<TrainingVideo> videos) : videos_(std::move(videos)) {}
  std::size_t size() const override { return videos_.size(); }
  std::string id(std::size_t v) const override { return videos_[v].id; }
  int label(std::size_t v) const override { return videos_[v].label; }
  int frame_count(std::size_t v) const override { return static_cast<int>(videos_[v].frames.size()); }
  int flow_count(std::size_t v) const override { return static_cast<int>(videos_[v].flows.size()); }
  RgbImage frame(std::size_t v, int i) const override { return videos_[v].frames.at(static_cast<std::size_t>(i)); }
  RgbImage flow(std::size_t v, int i) const override { return videos_[v].flows.at(static_cast<std::size_t>(i)); }

 private:
  std::vector<TrainingVideo> videos_;
};

enum class Provenance { kSpatialFrame, kFlowMap, kFramePair };
const char* to_string(Provenance p);

struct StreamItem {
  std::size_t video = 0;
  int index = 0;
  int label = 0;
  Provenance provenance = Provenance::kSpatialFrame;
  bool operator==(const StreamItem&) const = default;
};

// Every candidate sample for a variant: all frames (spatial), all flow maps (flow),
// or aligned frame/flow pairs (feature fusion). Shuffled with a seed derived from
// (seed, epoch); epoch < 0 leaves the natural order.
std::vector<StreamItem> build_training_stream(const TrainingSource& src, Variant variant, std::uint64_t seed, int epoch);

struct SampleOptions {
  CropPolicy crop{448, CropMode::kRandom};
  bool crop_flow = true;  // false for native-size flow input
  std::optional<AugmentationConfig> spatial_augment;
  std::optional<AugmentationConfig> flow_augment;
};

struct TrainingSample {
  std::optional<RgbImage> spatial;
  std::optional<RgbImage> flow;
  int label = 0;
  Provenance provenance = Provenance::kSpatialFrame;
};

// Crops (and augments, when configured) one stream item. The crop window is shared
// by the frame and the flow map of a pair.
TrainingSample materialize(const TrainingSource& src, const StreamItem& item, const SampleOptions& opts,
                           std::uint64_t seed, int epoch);

struct TrainConfig {
  double lr_init = 1e-4;
  double lr_min = 1e-6;
  int plateau_patience = 5;
  double lr_factor = 10.0;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int max_epochs = 0;  // 0: run until the schedule terminates
  double weight_decay = 0.0;
  double val_threshold = 0.5;
  int jobs = 1;
  SampleOptions train_sampling;
  SampleOptions val_sampling{{448, CropMode::kCenter}, true, std::nullopt, std::nullopt};
};

void validate(const TrainConfig& cfg);

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

struct TrainState {
  int epoch = 0;
  double lr = 0.0;
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;  // validation BCE of the retained checkpoint
  int best_epoch = 0;
  int epochs_since_improve = 0;
  std::vector<HistoryRow> history;
  std::string stop_reason;
};

std::string history_csv(const std::vector<HistoryRow>& rows);

struct ValidationMetrics {
  double acc = 0.0;   // frame-level accuracy at cfg.val_threshold
  double loss = 0.0;  // mean BCE
};

// Scores the un-augmented, un-shuffled validation stream with the model's own output.
ValidationMetrics validation_metrics(const Model& model, const TrainingSource& val, const TrainConfig& cfg);
double validation_accuracy(const Model& model, const TrainingSource& val, const TrainConfig& cfg);

// Trains until the schedule terminates (or max_epochs). When run_dir is non-empty it
// receives history.csv, best.ckpt and last.ckpt after every epoch. On return the
// model holds the best-validation weights: highest validation accuracy, ties broken
// by lower validation loss.
TrainState train_model(Model& model, const TrainingSource& train, const TrainingSource& val, const TrainConfig& cfg,
                       const std::filesystem::path& run_dir, const nlohmann::json& recipe);

}  // namespace aigvdet
