#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace aigvdet::nn {

// Single image activation, CHW contiguous.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, float fill = 0.0f)
      : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  float& at(int ci, int y, int x) { return data[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
  float at(int ci, int y, int x) const { return data[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
};

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
};

// Flat, ordered parameter list. Modules refer to entries by index, so the weights
// can be shared read-only while gradients live in a separate Gradients object.
class ParameterStore {
 public:
  int add(std::string name, std::vector<int> shape);
  Parameter& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Parameter& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

class Gradients {
 public:
  explicit Gradients(const ParameterStore& store);
  std::vector<float>& operator[](int i) { return grads_[static_cast<std::size_t>(i)]; }
  const std::vector<float>& operator[](int i) const { return grads_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return grads_.size(); }
  void zero();
  void scale(float s);

 private:
  std::vector<std::vector<float>> grads_;
};

struct ModuleState {
  virtual ~ModuleState() = default;
};
using StatePtr = std::unique_ptr<ModuleState>;

// Stateless with respect to activations: forward() records what backward() needs
// into `state` only when one is supplied, so inference is safe to share across threads.
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const ParameterStore& p, const Tensor& x, StatePtr* state) const = 0;
  virtual Tensor backward(const ParameterStore& p, const ModuleState& state, const Tensor& grad_out,
                          Gradients& grads) const = 0;
  virtual int out_channels() const = 0;
  // Portable description (weights inlined) for graph export.
  virtual nlohmann::json describe(const ParameterStore& p) const = 0;
};

class Conv2d final : public Module {
 public:
  Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride, int pad);
  Tensor forward(const ParameterStore& p, const Tensor& x, StatePtr* state) const override;
  Tensor backward(const ParameterStore& p, const ModuleState& state, const Tensor& grad_out,
                  Gradients& grads) const override;
  int out_channels() const override { return out_; }
  nlohmann::json describe(const ParameterStore& p) const override;

  int weight_index() const { return weight_; }
  int bias_index() const { return bias_; }
  int fan_in() const { return in_ * k_ * k_; }

 private:
  int in_, out_, k_, stride_, pad_;
  int weight_, bias_;
};

class Relu final : public Module {
 public:
  explicit Relu(int channels) : channels_(channels) {}
  Tensor forward(const ParameterStore& p, const Tensor& x, StatePtr* state) const override;
  Tensor backward(const ParameterStore& p, const ModuleState& state, const Tensor& grad_out,
                  Gradients& grads) const override;
  int out_channels() const override { return channels_; }
  nlohmann::json describe(const ParameterStore&) const override { return {{"op", "relu"}}; }

 private:
  int channels_;
};

class MaxPool2d final : public Module {
 public:
  MaxPool2d(int channels, int kernel, int stride, int pad) : channels_(channels), k_(kernel), stride_(stride), pad_(pad) {}
  Tensor forward(const ParameterStore& p, const Tensor& x, StatePtr* state) const override;
  Tensor backward(const ParameterStore& p, const ModuleState& state, const Tensor& grad_out,
                  Gradients& grads) const override;
  int out_channels() const override { return channels_; }
  nlohmann::json describe(const ParameterStore&) const override {
    return {{"op", "maxpool"}, {"kernel", k_}, {"stride", stride_}, {"pad", pad_}};
  }

 private:
  int channels_, k_, stride_, pad_;
};

class Sequential final : public Module {
 public:
  void add(std::unique_ptr<Module> m) { modules_.push_back(std::move(m)); }
  Tensor forward(const ParameterStore& p, const Tensor& x, StatePtr* state) const override;
  Tensor backward(const ParameterStore& p, const ModuleState& state, const Tensor& grad_out,
                  Gradients& grads) const override;
  int out_channels() const override { return modules_.back()->out_channels(); }
  nlohmann::json describe(const ParameterStore& p) const override;
  const std::vector<std::unique_ptr<Module>>& modules() const { return modules_; }

 private:
  std::vector<std::unique_ptr<Module>> modules_;
};

// relu(body(x) + shortcut(x)); the shortcut is identity when null.
class Residual final : public Module {
 public:
  Residual(std::unique_ptr<Sequential> body, std::unique_ptr<Conv2d> shortcut)
      : body_(std::move(body)), shortcut_(std::move(shortcut)) {}
  Tensor forward(const ParameterStore& p, const Tensor& x, StatePtr* state) const override;
  Tensor backward(const ParameterStore& p, const ModuleState& state, const Tensor& grad_out,
                  Gradients& grads) const override;
  int out_channels() const override { return body_->out_channels(); }
  nlohmann::json describe(const ParameterStore& p) const override;

 private:
  std::unique_ptr<Sequential> body_;
  std::unique_ptr<Conv2d> shortcut_;
};

std::vector<float> global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(std::span<const float> grad, int c, int h, int w);

// FC(width -> 1). Returns the logit.
class LinearHead {
 public:
  LinearHead() = default;
  LinearHead(ParameterStore& store, const std::string& name, int width);
  double logit(const ParameterStore& p, std::span<const float> feature) const;
  // Accumulates d logit into the head gradients; returns d feature.
  std::vector<float> backward(const ParameterStore& p, std::span<const float> feature, double grad_logit,
                              Gradients& grads) const;
  int width() const { return width_; }
  int weight_index() const { return weight_; }
  int bias_index() const { return bias_; }

 private:
  int width_ = 0;
  int weight_ = -1;
  int bias_ = -1;
};

double sigmoid(double z);

// He-uniform conv weights, zero biases, small-uniform head weights with zero bias.
void init_conv(ParameterStore& p, const Conv2d& conv, std::uint64_t seed, float gain = 1.0f);
void init_head(ParameterStore& p, const LinearHead& head, std::uint64_t seed);

class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };
  explicit Adam(const ParameterStore& store) : Adam(store, Options{}) {}
  Adam(const ParameterStore& store, Options opts);
  void step(ParameterStore& store, const Gradients& grads, double lr);
  std::int64_t steps() const { return t_; }

 private:
  Options opts_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace aigvdet::nn
