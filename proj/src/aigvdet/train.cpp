#include "aigvdet/train.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "aigvdet/error.hpp"
#include "aigvdet/rng.hpp"

namespace aigvdet {
namespace {

// Relative slack when comparing a candidate rate with lr_min, so 1e-4 / 10^2 still
// counts as reaching 1e-6 despite rounding.
constexpr double kRateTolerance = 1e-9;

std::uint64_t sample_seed(std::uint64_t seed, const std::string& video_id, const StreamItem& item, int epoch) {
  const std::uint64_t base = derive_seed(seed, video_id, static_cast<std::uint64_t>(item.index));
  return derive_seed(base, to_string(item.provenance), static_cast<std::uint64_t>(epoch));
}

ModelInput as_input(const TrainingSample& s) {
  return ModelInput{s.spatial ? &*s.spatial : nullptr, s.flow ? &*s.flow : nullptr};
}

void check_provenance(const Model& model, const TrainingSample& s) {
  const bool ok = model.uses(Modality::kSpatial) == s.spatial.has_value() &&
                  model.uses(Modality::kFlow) == s.flow.has_value();
  if (!ok)
    fail(ErrorCode::kRuntime, fmt::format("{} received a {} sample", to_string(model.variant()), to_string(s.provenance)));
}

void add_into(nn::Gradients& dst, const nn::Gradients& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& d = dst[static_cast<int>(i)];
    const auto& s = src[static_cast<int>(i)];
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
  }
}

// Splits [0, n) into `jobs` contiguous slices and runs fn(slice, begin, end) on each.
template <typename Fn>
void run_slices(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t k = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(jobs), n));
  if (k == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(k);
  for (std::size_t s = 0; s < k; ++s) {
    threads.emplace_back([&, s] {
      try {
        fn(s, n * s / k, n * (s + 1) / k);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

double bce_loss(double p, int y) {
  const double q = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  return y ? -std::log(q) : -std::log1p(-q);
}

LogitLoss bce_with_logit(double z, int y) {
  LogitLoss out;
  out.loss = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  out.grad = nn::sigmoid(z) - y;
  return out;
}

PlateauSchedule::PlateauSchedule(double lr_init, double lr_min, int patience, double factor)
    : lr_init_(lr_init), lr_min_(lr_min), factor_(factor), patience_(patience), lr_(lr_init) {
  require(lr_min > 0.0 && lr_min < lr_init, ErrorCode::kValidation, "need 0 < lr_min < lr_init");
  require(patience >= 1, ErrorCode::kValidation, "plateau_patience must be >= 1");
  require(factor > 1.0, ErrorCode::kValidation, "lr_factor must be > 1");
}

PlateauSchedule::Action PlateauSchedule::observe(double val_acc) {
  require(!terminated_, ErrorCode::kRuntime, "schedule already terminated");
  improved_last_ = !seen_ || val_acc > best_;
  if (improved_last_) {
    best_ = val_acc;
    since_improve_ = 0;
  } else {
    ++since_improve_;
  }
  seen_ = true;
  if (since_improve_ < patience_) return Action::kContinue;
  const double next = lr_init_ / std::pow(factor_, reductions_ + 1);
  if (next < lr_min_ * (1.0 - kRateTolerance)) {
    terminated_ = true;
    return Action::kTerminate;
  }
  ++reductions_;
  lr_ = next;
  since_improve_ = 0;
  return Action::kReduced;
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kSpatialFrame: return "spatial_frame";
    case Provenance::kFlowMap: return "flow_map";
    case Provenance::kFramePair: return "frame_pair";
  }
  return "?";
}

std::vector<StreamItem> build_training_stream(const TrainingSource& src, Variant variant, std::uint64_t seed, int epoch) {
  require(variant != Variant::kAIGVDet, ErrorCode::kInvalidArgument,
          "AIGVDet trains its two branches separately; build a stream per branch");
  std::vector<StreamItem> items;
  for (std::size_t v = 0; v < src.size(); ++v) {
    const int label = src.label(v);
    switch (variant) {
      case Variant::kSSpatial:
        for (int i = 0; i < src.frame_count(v); ++i) items.push_back({v, i, label, Provenance::kSpatialFrame});
        break;
      case Variant::kSOptical:
      case Variant::kSOpticalNoCp:
        for (int i = 0; i < src.flow_count(v); ++i) items.push_back({v, i, label, Provenance::kFlowMap});
        break;
      default: {
        const int n = std::min(src.frame_count(v), src.flow_count(v));
        for (int i = 0; i < n; ++i) items.push_back({v, i, label, Provenance::kFramePair});
      }
    }
  }
  if (epoch >= 0) {
    Rng rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = items.size(); i > 1; --i)
      std::swap(items[i - 1], items[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
  }
  return items;
}

TrainingSample materialize(const TrainingSource& src, const StreamItem& item, const SampleOptions& opts,
                           std::uint64_t seed, int epoch) {
  const std::uint64_t s = sample_seed(seed, src.id(item.video), item, epoch);
  const std::uint64_t crop_seed = derive_seed(s, "crop");
  TrainingSample out;
  out.label = item.label;
  out.provenance = item.provenance;
  if (item.provenance != Provenance::kFlowMap) {
    RgbImage img = crop(src.frame(item.video, item.index), opts.crop, crop_seed);
    if (opts.spatial_augment) img = augment(img, *opts.spatial_augment, derive_seed(s, "augment.spatial")).image;
    out.spatial = std::move(img);
  }
  if (item.provenance != Provenance::kSpatialFrame) {
    RgbImage img = src.flow(item.video, item.index);
    if (opts.crop_flow) img = crop(img, opts.crop, crop_seed);
    if (opts.flow_augment) img = augment(img, *opts.flow_augment, derive_seed(s, "augment.flow")).image;
    out.flow = std::move(img);
  }
  return out;
}

void validate(const TrainConfig& cfg) {
  PlateauSchedule(cfg.lr_init, cfg.lr_min, cfg.plateau_patience, cfg.lr_factor);
  require(cfg.batch_size >= 1, ErrorCode::kValidation, "train.batch_size must be >= 1");
  require(cfg.max_epochs >= 0, ErrorCode::kValidation, "train.max_epochs must be >= 0");
  require(cfg.weight_decay >= 0.0, ErrorCode::kValidation, "train.weight_decay must be >= 0");
  require(cfg.val_threshold >= 0.0 && cfg.val_threshold <= 1.0, ErrorCode::kValidation,
          "train.val_threshold must be in [0,1]");
  require(cfg.jobs >= 1, ErrorCode::kValidation, "jobs must be >= 1");
  if (cfg.train_sampling.spatial_augment) validate(*cfg.train_sampling.spatial_augment);
  if (cfg.train_sampling.flow_augment) validate(*cfg.train_sampling.flow_augment);
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = "epoch,train_loss,val_acc,lr\n";
  for (const auto& r : rows) out += fmt::format("{},{:.9g},{:.9g},{:.9g}\n", r.epoch, r.train_loss, r.val_acc, r.lr);
  return out;
}

ValidationMetrics validation_metrics(const Model& model, const TrainingSource& val, const TrainConfig& cfg) {
  const auto items = build_training_stream(val, model.variant(), cfg.seed, -1);
  require(!items.empty(), ErrorCode::kInsufficientData, "validation set is empty");
  std::vector<int> correct(items.size(), 0);
  std::vector<double> losses(items.size(), 0.0);
  run_slices(items.size(), cfg.jobs, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto sample = materialize(val, items[i], cfg.val_sampling, cfg.seed, 0);
      check_provenance(model, sample);
      const double z = model.logit(as_input(sample));
      const int predicted = nn::sigmoid(z) >= cfg.val_threshold ? 1 : 0;
      correct[i] = predicted == sample.label ? 1 : 0;
      losses[i] = bce_with_logit(z, sample.label).loss;
    }
  });
  std::size_t hits = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    hits += static_cast<std::size_t>(correct[i]);
    loss += losses[i];
  }
  const auto n = static_cast<double>(items.size());
  return {static_cast<double>(hits) / n, loss / n};
}

double validation_accuracy(const Model& model, const TrainingSource& val, const TrainConfig& cfg) {
  return validation_metrics(model, val, cfg).acc;
}

TrainState train_model(Model& model, const TrainingSource& train, const TrainingSource& val, const TrainConfig& cfg,
                       const std::filesystem::path& run_dir, const nlohmann::json& recipe) {
  validate(cfg);
  require(model.variant() != Variant::kAIGVDet, ErrorCode::kInvalidArgument, "cannot train AIGVDet as one model");
  if (!run_dir.empty()) std::filesystem::create_directories(run_dir);

  PlateauSchedule schedule(cfg.lr_init, cfg.lr_min, cfg.plateau_patience, cfg.lr_factor);
  nn::Adam adam(model.params(), nn::Adam::Options{0.9, 0.999, 1e-8, cfg.weight_decay});
  TrainState state;
  std::vector<std::vector<float>> best_weights;

  for (int epoch = 1;; ++epoch) {
    const auto stream = build_training_stream(train, model.variant(), cfg.seed, epoch);
    require(!stream.empty(), ErrorCode::kInsufficientData, "training stream is empty");
    const double lr = schedule.lr();
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < stream.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(stream.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const int slices = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(end - start)));
      std::vector<nn::Gradients> partial(static_cast<std::size_t>(slices), nn::Gradients(model.params()));
      std::vector<double> losses(end - start, 0.0);
      run_slices(end - start, slices, [&](std::size_t s, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          const auto sample = materialize(train, stream[start + i], cfg.train_sampling, cfg.seed, epoch);
          check_provenance(model, sample);
          losses[i] = model.accumulate_gradients(as_input(sample), sample.label, partial[s]);
        }
      });
      for (std::size_t i = 0; i < losses.size(); ++i) {
        if (!std::isfinite(losses[i]))
          fail(ErrorCode::kNumerical, fmt::format("non-finite loss at epoch {} on sample {} of {}", epoch,
                                                  stream[start + i].index, train.id(stream[start + i].video)));
        loss_sum += losses[i];
      }
      for (std::size_t s = 1; s < partial.size(); ++s) add_into(partial[0], partial[s]);
      partial[0].scale(1.0f / static_cast<float>(end - start));
      adam.step(model.params(), partial[0], lr);
    }

    const auto metrics = validation_metrics(model, val, cfg);
    const double val_acc = metrics.acc;
    state.epoch = epoch;
    state.history.push_back({epoch, loss_sum / static_cast<double>(stream.size()), val_acc, lr});
    const auto action = schedule.observe(val_acc);
    const bool tie_with_lower_loss = val_acc == state.best_val_acc && metrics.loss < state.best_val_loss;
    if (schedule.improved_last() || tie_with_lower_loss) {
      state.best_val_acc = val_acc;
      state.best_val_loss = metrics.loss;
      state.best_epoch = epoch;
      best_weights.clear();
      for (const auto& p : model.params()) best_weights.push_back(p.value);
      if (!run_dir.empty()) save_checkpoint(model, run_dir / "best.ckpt", recipe);
    }
    spdlog::info("{} epoch {}: loss {:.5f} val_acc {:.4f} lr {:.1e}", to_string(model.variant()), epoch,
                 state.history.back().train_loss, val_acc, lr);
    if (!run_dir.empty()) {
      save_checkpoint(model, run_dir / "last.ckpt", recipe);
      const std::string csv = history_csv(state.history);
      write_bytes_atomic(run_dir / "history.csv", std::vector<std::uint8_t>(csv.begin(), csv.end()));
    }
    state.lr = schedule.lr();
    state.epochs_since_improve = schedule.epochs_since_improve();
    if (action == PlateauSchedule::Action::kTerminate) {
      state.stop_reason = "lr_min";
      break;
    }
    if (cfg.max_epochs > 0 && epoch >= cfg.max_epochs) {
      state.stop_reason = "max_epochs";
      break;
    }
  }

  std::size_t i = 0;
  for (auto& p : model.params()) p.value = best_weights[i++];
  return state;
}

}  // namespace aigvdet
