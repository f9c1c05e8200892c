#include "aigvdet/model.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "aigvdet/error.hpp"
#include "aigvdet/rng.hpp"

namespace aigvdet {
namespace {

constexpr char kMagic[8] = {'A', 'I', 'G', 'V', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};

struct BackboneBuilder {
  nn::ParameterStore& store;
  std::string prefix;
  std::vector<std::pair<const nn::Conv2d*, float>>& convs;

  std::unique_ptr<nn::Conv2d> conv(const std::string& name, int in, int out, int k, int stride, int pad,
                                   float gain = 1.0f) {
    auto c = std::make_unique<nn::Conv2d>(store, prefix + name, in, out, k, stride, pad);
    convs.emplace_back(c.get(), gain);
    return c;
  }
};

// Residual bodies end without a nonlinearity; their last conv starts small so the
// unnormalized stack begins close to identity.
constexpr float kResidualTailGain = 0.2f;

void build_tiny(nn::Sequential& net, BackboneBuilder& b) {
  int in = 3;
  int i = 1;
  for (int out : {16, 32, 64}) {
    net.add(b.conv(fmt::format("conv{}", i++), in, out, 3, 2, 1));
    net.add(std::make_unique<nn::Relu>(out));
    in = out;
  }
}

void build_resnet_mini(nn::Sequential& net, BackboneBuilder& b) {
  net.add(b.conv("conv1", 3, 16, 3, 2, 1));
  net.add(std::make_unique<nn::Relu>(16));
  int in = 16;
  int layer = 1;
  for (int out : {32, 64}) {
    const std::string name = fmt::format("layer{}.0.", layer++);
    auto body = std::make_unique<nn::Sequential>();
    body->add(b.conv(name + "conv1", in, out, 3, 2, 1));
    body->add(std::make_unique<nn::Relu>(out));
    body->add(b.conv(name + "conv2", out, out, 3, 1, 1, kResidualTailGain));
    auto shortcut = b.conv(name + "downsample.0", in, out, 1, 2, 0);
    net.add(std::make_unique<nn::Residual>(std::move(body), std::move(shortcut)));
    in = out;
  }
}

// Bottleneck ResNet-50 (torchvision v1.5 layout, batch norm folded into conv bias).
void build_resnet50(nn::Sequential& net, BackboneBuilder& b) {
  net.add(b.conv("conv1", 3, 64, 7, 2, 3));
  net.add(std::make_unique<nn::Relu>(64));
  net.add(std::make_unique<nn::MaxPool2d>(64, 3, 2, 1));
  int in = 64;
  const int blocks[4] = {3, 4, 6, 3};
  const int mids[4] = {64, 128, 256, 512};
  for (int s = 0; s < 4; ++s) {
    const int mid = mids[s];
    const int out = mid * 4;
    for (int k = 0; k < blocks[s]; ++k) {
      const std::string name = fmt::format("layer{}.{}.", s + 1, k);
      const int stride = (k == 0 && s > 0) ? 2 : 1;
      auto body = std::make_unique<nn::Sequential>();
      body->add(b.conv(name + "conv1", in, mid, 1, 1, 0));
      body->add(std::make_unique<nn::Relu>(mid));
      body->add(b.conv(name + "conv2", mid, mid, 3, stride, 1));
      body->add(std::make_unique<nn::Relu>(mid));
      body->add(b.conv(name + "conv3", mid, out, 1, 1, 0, kResidualTailGain));
      std::unique_ptr<nn::Conv2d> shortcut;
      if (k == 0) shortcut = b.conv(name + "downsample.0", in, out, 1, stride, 0);
      net.add(std::make_unique<nn::Residual>(std::move(body), std::move(shortcut)));
      in = out;
    }
  }
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

struct RawFile {
  nlohmann::json header;
  std::map<std::string, std::pair<std::vector<int>, std::vector<float>>> tensors;
  std::vector<std::string> order;
};

RawFile read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kMagic, 8) == 0, ErrorCode::kParse, path.string() + " is not a checkpoint");
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&header_len), 8);
  require(in.good() && version == kVersion, ErrorCode::kParse, fmt::format("unsupported checkpoint version {}", version));
  require(header_len < (1ULL << 30), ErrorCode::kParse, "checkpoint header too large");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  require(in.good(), ErrorCode::kParse, "truncated checkpoint header");
  RawFile raw;
  try {
    raw.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("checkpoint header: ") + e.what());
  }
  for (const auto& entry : raw.header.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<float> data(n);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    require(in.good(), ErrorCode::kParse, "truncated checkpoint data at " + name);
    raw.order.push_back(name);
    raw.tensors.emplace(name, std::make_pair(shape, std::move(data)));
  }
  return raw;
}

nlohmann::json param_table(const nn::ParameterStore& store) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& p : store) table.push_back({{"name", p.name}, {"shape", p.shape}});
  return table;
}

nlohmann::json branch_json(const BranchConfig& c) {
  return {{"backbone", c.backbone}, {"input_size", c.input_size}, {"pretrained", c.pretrained}};
}

BranchConfig branch_from_json(const nlohmann::json& j) {
  BranchConfig c;
  c.backbone = j.at("backbone").get<std::string>();
  c.input_size = j.at("input_size").get<int>();
  c.pretrained = j.value("pretrained", false);
  return c;
}

std::string backbone_suffix(const std::string& name) {
  const auto pos = name.find("backbone.");
  return pos == std::string::npos ? std::string() : name.substr(pos + 9);
}

}  // namespace

const char* to_string(Modality m) { return m == Modality::kSpatial ? "spatial" : "flow"; }

Modality parse_modality(const std::string& s) {
  if (s == "spatial") return Modality::kSpatial;
  if (s == "flow" || s == "optical") return Modality::kFlow;
  fail(ErrorCode::kValidation, "bad modality '" + s + "'");
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kSSpatial: return "S_spatial";
    case Variant::kSOptical: return "S_optical";
    case Variant::kSOpticalNoCp: return "S_optical_no_cp";
    case Variant::kFFConcat: return "FF_concat";
    case Variant::kFFAdd: return "FF_add";
    case Variant::kAIGVDet: return "AIGVDet";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants)
    if (s == to_string(v)) return v;
  fail(ErrorCode::kValidation, "bad variant '" + s + "'");
}

FeatureVector fuse_features(const FeatureVector& a, const FeatureVector& b, FeatureFusion kind) {
  FeatureVector out;
  out.source = a.source;
  if (kind == FeatureFusion::kConcat) {
    out.values = a.values;
    out.values.insert(out.values.end(), b.values.begin(), b.values.end());
    return out;
  }
  require(a.values.size() == b.values.size(), ErrorCode::kShape,
          fmt::format("element-wise fusion needs equal lengths, got {} and {}", a.values.size(), b.values.size()));
  out.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] + b.values[i];
  return out;
}

nn::Tensor to_input_tensor(const RgbImage& img) {
  nn::Tensor t(3, img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    const std::uint8_t* row = img.mat().ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = (row[3 * x + c] / 255.0f - kMean[c]) / kStd[c];
  }
  return t;
}

bool is_known_backbone(const std::string& profile) {
  return profile == "tiny" || profile == "resnet-mini" || profile == "resnet50";
}

Backbone::Backbone(nn::ParameterStore& store, const std::string& prefix, const std::string& profile)
    : prefix_(prefix), profile_(profile) {
  BackboneBuilder b{store, prefix, convs_};
  if (profile == "tiny")
    build_tiny(net_, b);
  else if (profile == "resnet-mini")
    build_resnet_mini(net_, b);
  else if (profile == "resnet50")
    build_resnet50(net_, b);
  else
    fail(ErrorCode::kValidation, "unknown backbone '" + profile + "'");
}

void Backbone::init(nn::ParameterStore& p, std::uint64_t seed) const {
  for (std::size_t i = 0; i < convs_.size(); ++i)
    nn::init_conv(p, *convs_[i].first, derive_seed(seed, prefix_, i), convs_[i].second);
}

BranchModel::BranchModel(Modality modality, BranchConfig cfg, std::uint64_t seed)
    : modality_(modality), cfg_(std::move(cfg)) {
  require(cfg_.input_size >= 0, ErrorCode::kValidation, "input_size must be >= 0");
  const std::string prefix = std::string(to_string(modality)) + ".";
  backbone_ = std::make_unique<Backbone>(params_, prefix + "backbone.", cfg_.backbone);
  head_ = nn::LinearHead(params_, prefix + "fc", backbone_->width());
  backbone_->init(params_, seed);
  nn::init_head(params_, head_, derive_seed(seed, prefix + "fc"));
}

Variant BranchModel::variant() const {
  if (modality_ == Modality::kSpatial) return Variant::kSSpatial;
  return cfg_.input_size == 0 ? Variant::kSOpticalNoCp : Variant::kSOptical;
}

void BranchModel::check_input(const RgbImage& image) const {
  if (cfg_.input_size == 0) return;
  if (image.width() != cfg_.input_size || image.height() != cfg_.input_size)
    fail(ErrorCode::kShape, fmt::format("{} branch expects {}x{} input, got {}x{}", to_string(modality_),
                                        cfg_.input_size, cfg_.input_size, image.width(), image.height()));
}

const RgbImage& BranchModel::pick(const ModelInput& in) const {
  const RgbImage* img = modality_ == Modality::kSpatial ? in.spatial : in.flow;
  if (img == nullptr)
    fail(ErrorCode::kInvalidArgument, fmt::format("{} needs a {} input", to_string(variant()), to_string(modality_)));
  return *img;
}

FeatureVector BranchModel::encode(const RgbImage& image) const {
  check_input(image);
  const nn::Tensor fmap = backbone_->forward(params_, to_input_tensor(image), nullptr);
  return FeatureVector{nn::global_average_pool(fmap), modality_};
}

double BranchModel::classify(const FeatureVector& feature) const {
  return nn::sigmoid(head_.logit(params_, feature.values));
}

double BranchModel::logit(const ModelInput& in) const { return head_.logit(params_, encode(pick(in)).values); }

double BranchModel::accumulate_gradients(const ModelInput& in, int label, nn::Gradients& grads) const {
  const RgbImage& image = pick(in);
  check_input(image);
  nn::StatePtr state;
  const nn::Tensor fmap = backbone_->forward(params_, to_input_tensor(image), &state);
  const auto feat = nn::global_average_pool(fmap);
  const double z = head_.logit(params_, feat);
  const double p = nn::sigmoid(z);
  const auto dfeat = head_.backward(params_, feat, p - label, grads);
  backbone_->backward(params_, *state, nn::global_average_pool_backward(dfeat, fmap.c, fmap.h, fmap.w), grads);
  // Stable log-sigmoid form of binary cross-entropy on the logit.
  return std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
}

nlohmann::json BranchModel::describe_graph() const {
  return {{"format", "aigvdet-graph-v1"},
          {"variant", to_string(variant())},
          {"input_size", cfg_.input_size},
          {"normalize", {{"mean", kMean}, {"std", kStd}}},
          {"branches", {{{"modality", to_string(modality_)}, {"backbone", backbone_->describe(params_)}}}},
          {"fusion", "none"},
          {"head", {{"weight", params_[head_.weight_index()].value}, {"bias", params_[head_.bias_index()].value[0]}}}};
}

FeatureFusionModel::FeatureFusionModel(FeatureFusion kind, BranchConfig cfg, std::uint64_t seed)
    : kind_(kind), cfg_(std::move(cfg)) {
  spatial_ = std::make_unique<Backbone>(params_, "spatial.backbone.", cfg_.backbone);
  flow_ = std::make_unique<Backbone>(params_, "flow.backbone.", cfg_.backbone);
  const int width = kind_ == FeatureFusion::kConcat ? spatial_->width() + flow_->width() : spatial_->width();
  head_ = nn::LinearHead(params_, "fused.fc", width);
  spatial_->init(params_, seed);
  flow_->init(params_, seed);
  nn::init_head(params_, head_, derive_seed(seed, "fused.fc"));
}

FeatureVector FeatureFusionModel::encode(Modality m, const RgbImage& image) const {
  if (cfg_.input_size != 0) {
    if (image.width() != cfg_.input_size || image.height() != cfg_.input_size)
      fail(ErrorCode::kShape, fmt::format("fusion model expects {}x{} input, got {}x{}", cfg_.input_size,
                                          cfg_.input_size, image.width(), image.height()));
  }
  const Backbone& b = m == Modality::kSpatial ? *spatial_ : *flow_;
  return FeatureVector{nn::global_average_pool(b.forward(params_, to_input_tensor(image), nullptr)), m};
}

double FeatureFusionModel::logit(const ModelInput& in) const {
  require(in.spatial != nullptr && in.flow != nullptr, ErrorCode::kInvalidArgument, "fusion model needs both inputs");
  const auto fused = fuse_features(encode(Modality::kSpatial, *in.spatial), encode(Modality::kFlow, *in.flow), kind_);
  return head_.logit(params_, fused.values);
}

double FeatureFusionModel::accumulate_gradients(const ModelInput& in, int label, nn::Gradients& grads) const {
  require(in.spatial != nullptr && in.flow != nullptr, ErrorCode::kInvalidArgument, "fusion model needs both inputs");
  nn::StatePtr s_state, f_state;
  const nn::Tensor s_map = spatial_->forward(params_, to_input_tensor(*in.spatial), &s_state);
  const nn::Tensor f_map = flow_->forward(params_, to_input_tensor(*in.flow), &f_state);
  const FeatureVector s_feat{nn::global_average_pool(s_map), Modality::kSpatial};
  const FeatureVector f_feat{nn::global_average_pool(f_map), Modality::kFlow};
  const auto fused = fuse_features(s_feat, f_feat, kind_);
  const double z = head_.logit(params_, fused.values);
  const auto dfused = head_.backward(params_, fused.values, nn::sigmoid(z) - label, grads);

  std::vector<float> ds(dfused.begin(), dfused.begin() + static_cast<std::ptrdiff_t>(s_feat.values.size()));
  std::vector<float> df = kind_ == FeatureFusion::kConcat
                              ? std::vector<float>(dfused.begin() + static_cast<std::ptrdiff_t>(s_feat.values.size()), dfused.end())
                              : ds;
  spatial_->backward(params_, *s_state, nn::global_average_pool_backward(ds, s_map.c, s_map.h, s_map.w), grads);
  flow_->backward(params_, *f_state, nn::global_average_pool_backward(df, f_map.c, f_map.h, f_map.w), grads);
  return std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
}

nlohmann::json FeatureFusionModel::describe_graph() const {
  return {{"format", "aigvdet-graph-v1"},
          {"variant", to_string(variant())},
          {"input_size", cfg_.input_size},
          {"normalize", {{"mean", kMean}, {"std", kStd}}},
          {"branches",
           {{{"modality", "spatial"}, {"backbone", spatial_->describe(params_)}},
            {{"modality", "flow"}, {"backbone", flow_->describe(params_)}}}},
          {"fusion", kind_ == FeatureFusion::kConcat ? "concat" : "add"},
          {"head", {{"weight", params_[head_.weight_index()].value}, {"bias", params_[head_.bias_index()].value[0]}}}};
}

std::unique_ptr<Model> make_model(Variant variant, const BranchConfig& cfg, std::uint64_t seed) {
  switch (variant) {
    case Variant::kSSpatial: return std::make_unique<BranchModel>(Modality::kSpatial, cfg, seed);
    case Variant::kSOptical: return std::make_unique<BranchModel>(Modality::kFlow, cfg, seed);
    case Variant::kSOpticalNoCp: {
      BranchConfig native = cfg;
      native.input_size = 0;
      return std::make_unique<BranchModel>(Modality::kFlow, native, seed);
    }
    case Variant::kFFConcat: return std::make_unique<FeatureFusionModel>(FeatureFusion::kConcat, cfg, seed);
    case Variant::kFFAdd: return std::make_unique<FeatureFusionModel>(FeatureFusion::kAdd, cfg, seed);
    case Variant::kAIGVDet: break;
  }
  fail(ErrorCode::kInvalidArgument, "AIGVDet is assembled from an S_spatial and an S_optical model, not trained as one");
}

std::string recipe_fingerprint(const nlohmann::json& recipe) { return fmt::format("{:016x}", fnv1a64(recipe.dump())); }

void save_checkpoint(const Model& model, const std::filesystem::path& path, const nlohmann::json& recipe) {
  nlohmann::json header = {{"kind", "model"},
                           {"variant", to_string(model.variant())},
                           {"branch", branch_json(model.branch_configs().front())},
                           {"recipe", recipe},
                           {"recipe_fingerprint", recipe_fingerprint(recipe)},
                           {"params", param_table(model.params())}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::kIo, "cannot write checkpoint " + tmp.string());
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.params())
      out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    require(out.good(), ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  RawFile raw = read_raw(path);
  require(raw.header.value("kind", "") == "model", ErrorCode::kValidation,
          path.string() + " holds backbone weights only, not a trained model");
  LoadedCheckpoint out;
  try {
    const Variant variant = parse_variant(raw.header.at("variant").get<std::string>());
    const BranchConfig cfg = branch_from_json(raw.header.at("branch"));
    require(is_known_backbone(cfg.backbone), ErrorCode::kValidation, "checkpoint uses unknown backbone " + cfg.backbone);
    out.model = make_model(variant, cfg, 0);
    out.recipe = raw.header.value("recipe", nlohmann::json::object());
    out.recipe_fingerprint = raw.header.value("recipe_fingerprint", "");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("checkpoint header: ") + e.what());
  }
  auto& params = out.model->params();
  require(raw.order.size() == params.size(), ErrorCode::kValidation,
          fmt::format("{}: parameter count {} does not match architecture ({})", path.string(), raw.order.size(), params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[static_cast<int>(i)];
    const auto it = raw.tensors.find(p.name);
    require(it != raw.tensors.end() && it->second.first == p.shape, ErrorCode::kValidation,
            fmt::format("{}: parameter {} missing or mis-shaped", path.string(), p.name));
    p.value = std::move(it->second.second);
  }
  require(recipe_fingerprint(out.recipe) == out.recipe_fingerprint, ErrorCode::kCacheCorrupt,
          path.string() + ": recipe fingerprint mismatch");
  return out;
}

int load_pretrained_backbone(Model& model, const std::filesystem::path& path) {
  RawFile raw = read_raw(path);
  std::map<std::string, const std::pair<std::vector<int>, std::vector<float>>*> by_suffix;
  for (const auto& [name, tensor] : raw.tensors) {
    const auto suffix = backbone_suffix(name);
    if (!suffix.empty()) by_suffix[suffix] = &tensor;
  }
  int loaded = 0;
  for (auto& p : model.params()) {
    const auto suffix = backbone_suffix(p.name);
    if (suffix.empty()) continue;
    const auto it = by_suffix.find(suffix);
    if (it == by_suffix.end()) continue;
    require(it->second->first == p.shape, ErrorCode::kValidation,
            fmt::format("pretrained tensor {} has the wrong shape for {}", it->first, p.name));
    p.value = it->second->second;
    ++loaded;
  }
  require(loaded > 0, ErrorCode::kValidation, path.string() + " has no matching backbone weights");
  return loaded;
}

void export_graph(const Model& model, const std::filesystem::path& path) {
  const std::string text = model.describe_graph().dump();
  write_bytes_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace aigvdet
