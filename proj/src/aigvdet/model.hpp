#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "aigvdet/image.hpp"
#include "aigvdet/nn.hpp"

namespace aigvdet {

enum class Modality { kSpatial, kFlow };
const char* to_string(Modality m);
Modality parse_modality(const std::string& s);

enum class Variant { kSSpatial, kSOptical, kSOpticalNoCp, kFFConcat, kFFAdd, kAIGVDet };
const char* to_string(Variant v);
Variant parse_variant(const std::string& s);
inline constexpr Variant kAllVariants[] = {Variant::kSSpatial, Variant::kSOptical, Variant::kSOpticalNoCp,
                                           Variant::kFFConcat, Variant::kFFAdd,   Variant::kAIGVDet};

enum class FeatureFusion { kConcat, kAdd };

struct BranchConfig {
  std::string backbone = "resnet50";  // tiny | resnet-mini | resnet50
  int input_size = 448;               // 0: any native size (no crop)
  bool pretrained = false;            // true once backbone weights came from a pretrained file
};

struct FeatureVector {
  std::vector<float> values;
  Modality source = Modality::kSpatial;
};

FeatureVector fuse_features(const FeatureVector& a, const FeatureVector& b, FeatureFusion kind);

// Normalizes an 8-bit RGB image with the ImageNet channel statistics.
nn::Tensor to_input_tensor(const RgbImage& img);

class Backbone {
 public:
  Backbone(nn::ParameterStore& store, const std::string& prefix, const std::string& profile);
  nn::Tensor forward(const nn::ParameterStore& p, const nn::Tensor& x, nn::StatePtr* state) const {
    return net_.forward(p, x, state);
  }
  nn::Tensor backward(const nn::ParameterStore& p, const nn::ModuleState& s, const nn::Tensor& g,
                      nn::Gradients& grads) const {
    return net_.backward(p, s, g, grads);
  }
  int width() const { return net_.out_channels(); }
  const std::string& profile() const { return profile_; }
  const std::string& prefix() const { return prefix_; }
  void init(nn::ParameterStore& p, std::uint64_t seed) const;
  nlohmann::json describe(const nn::ParameterStore& p) const { return net_.describe(p); }

 private:
  std::string prefix_;
  std::string profile_;
  nn::Sequential net_;
  std::vector<std::pair<const nn::Conv2d*, float>> convs_;  // with init gain
};

bool is_known_backbone(const std::string& profile);

struct ModelInput {
  const RgbImage* spatial = nullptr;
  const RgbImage* flow = nullptr;
};

class Model {
 public:
  virtual ~Model() = default;
  virtual Variant variant() const = 0;
  virtual bool uses(Modality m) const = 0;
  // Required square input size, or 0 for native-size inputs.
  virtual int input_size() const = 0;
  virtual std::vector<BranchConfig> branch_configs() const = 0;

  virtual double logit(const ModelInput& in) const = 0;
  double probability(const ModelInput& in) const { return nn::sigmoid(logit(in)); }
  // Adds d(BCE)/d(params) for one labeled input into `grads`; returns the loss.
  virtual double accumulate_gradients(const ModelInput& in, int label, nn::Gradients& grads) const = 0;

  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  virtual nlohmann::json describe_graph() const = 0;

 protected:
  nn::ParameterStore params_;
};

// One backbone + GAP + FC + sigmoid over a single modality.
class BranchModel final : public Model {
 public:
  BranchModel(Modality modality, BranchConfig cfg, std::uint64_t seed);

  Variant variant() const override;
  bool uses(Modality m) const override { return m == modality_; }
  int input_size() const override { return cfg_.input_size; }
  std::vector<BranchConfig> branch_configs() const override { return {cfg_}; }
  Modality modality() const { return modality_; }
  const BranchConfig& config() const { return cfg_; }
  void set_pretrained(bool v) { cfg_.pretrained = v; }

  FeatureVector encode(const RgbImage& image) const;
  double classify(const FeatureVector& feature) const;

  double logit(const ModelInput& in) const override;
  double accumulate_gradients(const ModelInput& in, int label, nn::Gradients& grads) const override;
  nlohmann::json describe_graph() const override;

  const nn::LinearHead& head() const { return head_; }
  const Backbone& backbone() const { return *backbone_; }

 private:
  const RgbImage& pick(const ModelInput& in) const;
  void check_input(const RgbImage& image) const;

  Modality modality_;
  BranchConfig cfg_;
  std::unique_ptr<Backbone> backbone_;
  nn::LinearHead head_;
};

// Two backbones whose pooled features are fused (concat or add) before one shared head.
class FeatureFusionModel final : public Model {
 public:
  FeatureFusionModel(FeatureFusion kind, BranchConfig cfg, std::uint64_t seed);

  Variant variant() const override { return kind_ == FeatureFusion::kConcat ? Variant::kFFConcat : Variant::kFFAdd; }
  bool uses(Modality) const override { return true; }
  int input_size() const override { return cfg_.input_size; }
  std::vector<BranchConfig> branch_configs() const override { return {cfg_}; }
  FeatureFusion kind() const { return kind_; }

  double logit(const ModelInput& in) const override;
  double accumulate_gradients(const ModelInput& in, int label, nn::Gradients& grads) const override;
  nlohmann::json describe_graph() const override;

  const nn::LinearHead& head() const { return head_; }
  FeatureVector encode(Modality m, const RgbImage& image) const;

 private:
  FeatureFusion kind_;
  BranchConfig cfg_;
  std::unique_ptr<Backbone> spatial_;
  std::unique_ptr<Backbone> flow_;
  nn::LinearHead head_;
};

// Builds an untrained model for a trainable variant (everything except AIGVDet,
// whose two branches are the S_spatial and S_optical models).
std::unique_ptr<Model> make_model(Variant variant, const BranchConfig& cfg, std::uint64_t seed);

// Binary checkpoint: "AIGVCKPT", u32 version, u64 header length, JSON header
// (variant, modality, branch config, recipe + fingerprint, parameter table), then
// little-endian float32 parameter data in table order.
void save_checkpoint(const Model& model, const std::filesystem::path& path, const nlohmann::json& recipe);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  nlohmann::json recipe;
  std::string recipe_fingerprint;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Copies backbone weights from a pretrained file (a checkpoint, or a backbone-only
// file written by tools/convert_torchvision_resnet50.py). Returns how many tensors
// were loaded; throws kValidation on a shape mismatch.
int load_pretrained_backbone(Model& model, const std::filesystem::path& path);

std::string recipe_fingerprint(const nlohmann::json& recipe);

// Portable inference graph (JSON, weights inlined).
void export_graph(const Model& model, const std::filesystem::path& path);

}  // namespace aigvdet
