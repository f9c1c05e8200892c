#include "aigvdet/nn.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>
#include <fmt/format.h>

#include "aigvdet/error.hpp"
#include "aigvdet/rng.hpp"

namespace aigvdet::nn {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

struct ConvState : ModuleState {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<float> col;  // (in*k*k) x (out_h*out_w)
};

struct ReluState : ModuleState {
  Tensor out;
};

struct PoolState : ModuleState {
  int in_h = 0, in_w = 0;
  std::vector<std::int32_t> argmax;
};

struct SequentialState : ModuleState {
  std::vector<StatePtr> states;
};

struct ResidualState : ModuleState {
  StatePtr body;
  StatePtr shortcut;
  Tensor out;
};

}  // namespace

int ParameterStore::add(std::string name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  params_.push_back(Parameter{std::move(name), std::move(shape), std::vector<float>(n, 0.0f)});
  return static_cast<int>(params_.size()) - 1;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Gradients::Gradients(const ParameterStore& store) {
  for (const auto& p : store) grads_.emplace_back(p.value.size(), 0.0f);
}

void Gradients::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0f);
}

void Gradients::scale(float s) {
  for (auto& g : grads_)
    for (auto& x : g) x *= s;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride, int pad)
    : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad) {
  weight_ = store.add(name + ".weight", {out, in, kernel, kernel});
  bias_ = store.add(name + ".bias", {out});
}

Tensor Conv2d::forward(const ParameterStore& p, const Tensor& x, StatePtr* state) const {
  require(x.c == in_, ErrorCode::kShape, fmt::format("conv expects {} channels, got {}", in_, x.c));
  const int oh = conv_out(x.h, k_, stride_, pad_);
  const int ow = conv_out(x.w, k_, stride_, pad_);
  require(oh >= 1 && ow >= 1, ErrorCode::kShape, fmt::format("input {}x{} too small for conv", x.w, x.h));
  const int rows = in_ * k_ * k_;
  const int cols = oh * ow;
  std::vector<float> col(static_cast<std::size_t>(rows) * cols, 0.0f);
  for (int ci = 0; ci < in_; ++ci) {
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        float* dst = col.data() + static_cast<std::size_t>((ci * k_ + ky) * k_ + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= x.h) continue;
          const float* src = x.data.data() + (static_cast<std::size_t>(ci) * x.h + iy) * x.w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < x.w) dst[oy * ow + ox] = src[ix];
          }
        }
      }
    }
  }
  Tensor y(out_, oh, ow);
  ConstMapMatrix wmat(p[weight_].value.data(), out_, rows);
  ConstMapMatrix cmat(col.data(), rows, cols);
  MapMatrix ymat(y.data.data(), out_, cols);
  ymat.noalias() = wmat * cmat;
  const auto& b = p[bias_].value;
  for (int o = 0; o < out_; ++o) ymat.row(o).array() += b[static_cast<std::size_t>(o)];

  if (state != nullptr) {
    auto s = std::make_unique<ConvState>();
    s->in_h = x.h;
    s->in_w = x.w;
    s->out_h = oh;
    s->out_w = ow;
    s->col = std::move(col);
    *state = std::move(s);
  }
  return y;
}

Tensor Conv2d::backward(const ParameterStore& p, const ModuleState& state, const Tensor& grad_out,
                        Gradients& grads) const {
  const auto& s = static_cast<const ConvState&>(state);
  const int rows = in_ * k_ * k_;
  const int cols = s.out_h * s.out_w;
  ConstMapMatrix gmat(grad_out.data.data(), out_, cols);
  ConstMapMatrix cmat(s.col.data(), rows, cols);
  MapMatrix gw(grads[weight_].data(), out_, rows);
  gw.noalias() += gmat * cmat.transpose();
  auto& gb = grads[bias_];
  for (int o = 0; o < out_; ++o) gb[static_cast<std::size_t>(o)] += gmat.row(o).sum();

  ConstMapMatrix wmat(p[weight_].value.data(), out_, rows);
  RowMatrix dcol = wmat.transpose() * gmat;
  Tensor dx(in_, s.in_h, s.in_w);
  for (int ci = 0; ci < in_; ++ci) {
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        const float* src = dcol.data() + static_cast<std::size_t>((ci * k_ + ky) * k_ + kx) * cols;
        for (int oy = 0; oy < s.out_h; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= s.in_h) continue;
          float* dst = dx.data.data() + (static_cast<std::size_t>(ci) * s.in_h + iy) * s.in_w;
          for (int ox = 0; ox < s.out_w; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < s.in_w) dst[ix] += src[oy * s.out_w + ox];
          }
        }
      }
    }
  }
  return dx;
}

nlohmann::json Conv2d::describe(const ParameterStore& p) const {
  return {{"op", "conv"},         {"in", in_},     {"out", out_},
          {"kernel", k_},         {"stride", stride_}, {"pad", pad_},
          {"weight", p[weight_].value}, {"bias", p[bias_].value}};
}

Tensor Relu::forward(const ParameterStore&, const Tensor& x, StatePtr* state) const {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
  if (state != nullptr) {
    auto s = std::make_unique<ReluState>();
    s->out = y;
    *state = std::move(s);
  }
  return y;
}

Tensor Relu::backward(const ParameterStore&, const ModuleState& state, const Tensor& grad_out, Gradients&) const {
  const auto& s = static_cast<const ReluState&>(state);
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (!(s.out.data[i] > 0.0f)) dx.data[i] = 0.0f;
  return dx;
}

Tensor MaxPool2d::forward(const ParameterStore&, const Tensor& x, StatePtr* state) const {
  const int oh = conv_out(x.h, k_, stride_, pad_);
  const int ow = conv_out(x.w, k_, stride_, pad_);
  require(oh >= 1 && ow >= 1, ErrorCode::kShape, "input too small for max pooling");
  Tensor y(x.c, oh, ow);
  std::vector<std::int32_t> argmax(y.size(), -1);
  for (int c = 0; c < x.c; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_i = -1;
        for (int ky = 0; ky < k_; ++ky) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= x.w) continue;
            const float v = x.at(c, iy, ix);
            if (v > best) {
              best = v;
              best_i = (c * x.h + iy) * x.w + ix;
            }
          }
        }
        y.at(c, oy, ox) = best;
        argmax[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = best_i;
      }
    }
  }
  if (state != nullptr) {
    auto s = std::make_unique<PoolState>();
    s->in_h = x.h;
    s->in_w = x.w;
    s->argmax = std::move(argmax);
    *state = std::move(s);
  }
  return y;
}

Tensor MaxPool2d::backward(const ParameterStore&, const ModuleState& state, const Tensor& grad_out, Gradients&) const {
  const auto& s = static_cast<const PoolState&>(state);
  Tensor dx(grad_out.c, s.in_h, s.in_w);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i)
    if (s.argmax[i] >= 0) dx.data[static_cast<std::size_t>(s.argmax[i])] += grad_out.data[i];
  return dx;
}

Tensor Sequential::forward(const ParameterStore& p, const Tensor& x, StatePtr* state) const {
  std::unique_ptr<SequentialState> s;
  if (state != nullptr) s = std::make_unique<SequentialState>();
  Tensor cur = x;
  for (const auto& m : modules_) {
    StatePtr child;
    cur = m->forward(p, cur, s ? &child : nullptr);
    if (s) s->states.push_back(std::move(child));
  }
  if (state != nullptr) *state = std::move(s);
  return cur;
}

Tensor Sequential::backward(const ParameterStore& p, const ModuleState& state, const Tensor& grad_out,
                            Gradients& grads) const {
  const auto& s = static_cast<const SequentialState&>(state);
  Tensor g = grad_out;
  for (std::size_t i = modules_.size(); i-- > 0;) g = modules_[i]->backward(p, *s.states[i], g, grads);
  return g;
}

nlohmann::json Sequential::describe(const ParameterStore& p) const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& m : modules_) layers.push_back(m->describe(p));
  return {{"op", "sequential"}, {"layers", layers}};
}

Tensor Residual::forward(const ParameterStore& p, const Tensor& x, StatePtr* state) const {
  std::unique_ptr<ResidualState> s;
  if (state != nullptr) s = std::make_unique<ResidualState>();
  Tensor y = body_->forward(p, x, s ? &s->body : nullptr);
  if (shortcut_) {
    const Tensor sc = shortcut_->forward(p, x, s ? &s->shortcut : nullptr);
    require(sc.size() == y.size(), ErrorCode::kShape, "residual shortcut shape mismatch");
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += sc.data[i];
  } else {
    require(x.size() == y.size(), ErrorCode::kShape, "identity shortcut needs matching shapes");
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
  }
  for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
  if (s) {
    s->out = y;
    *state = std::move(s);
  }
  return y;
}

Tensor Residual::backward(const ParameterStore& p, const ModuleState& state, const Tensor& grad_out,
                          Gradients& grads) const {
  const auto& s = static_cast<const ResidualState&>(state);
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (!(s.out.data[i] > 0.0f)) g.data[i] = 0.0f;
  Tensor dx = body_->backward(p, *s.body, g, grads);
  if (shortcut_) {
    const Tensor dsc = shortcut_->backward(p, *s.shortcut, g, grads);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dsc.data[i];
  } else {
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += g.data[i];
  }
  return dx;
}

nlohmann::json Residual::describe(const ParameterStore& p) const {
  nlohmann::json j = {{"op", "residual"}, {"body", body_->describe(p)}};
  j["shortcut"] = shortcut_ ? shortcut_->describe(p) : nlohmann::json(nullptr);
  return j;
}

std::vector<float> global_average_pool(const Tensor& x) {
  std::vector<float> out(static_cast<std::size_t>(x.c), 0.0f);
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  for (int c = 0; c < x.c; ++c) {
    double acc = 0.0;
    const float* src = x.data.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    out[static_cast<std::size_t>(c)] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return out;
}

Tensor global_average_pool_backward(std::span<const float> grad, int c, int h, int w) {
  Tensor dx(c, h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    const float g = grad[static_cast<std::size_t>(ci)] / static_cast<float>(plane);
    std::fill_n(dx.data.begin() + static_cast<std::ptrdiff_t>(ci * plane), plane, g);
  }
  return dx;
}

LinearHead::LinearHead(ParameterStore& store, const std::string& name, int width) : width_(width) {
  weight_ = store.add(name + ".weight", {1, width});
  bias_ = store.add(name + ".bias", {1});
}

double LinearHead::logit(const ParameterStore& p, std::span<const float> feature) const {
  require(static_cast<int>(feature.size()) == width_, ErrorCode::kShape,
          fmt::format("head expects a {}-d feature, got {}", width_, feature.size()));
  const auto& w = p[weight_].value;
  double z = p[bias_].value[0];
  for (std::size_t i = 0; i < feature.size(); ++i) z += static_cast<double>(w[i]) * feature[i];
  return z;
}

std::vector<float> LinearHead::backward(const ParameterStore& p, std::span<const float> feature, double grad_logit,
                                        Gradients& grads) const {
  const auto& w = p[weight_].value;
  auto& gw = grads[weight_];
  std::vector<float> dfeat(feature.size());
  for (std::size_t i = 0; i < feature.size(); ++i) {
    gw[i] += static_cast<float>(grad_logit * feature[i]);
    dfeat[i] = static_cast<float>(grad_logit * w[i]);
  }
  grads[bias_][0] += static_cast<float>(grad_logit);
  return dfeat;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void init_conv(ParameterStore& p, const Conv2d& conv, std::uint64_t seed, float gain) {
  Rng rng(seed);
  const double bound = gain * std::sqrt(6.0 / conv.fan_in());
  for (auto& v : p[conv.weight_index()].value) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  std::fill(p[conv.bias_index()].value.begin(), p[conv.bias_index()].value.end(), 0.0f);
}

void init_head(ParameterStore& p, const LinearHead& head, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(head.width()));
  for (auto& v : p[head.weight_index()].value) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound * 0.1);
  p[head.bias_index()].value[0] = 0.0f;
}

Adam::Adam(const ParameterStore& store, Options opts) : opts_(opts) {
  for (const auto& p : store) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void Adam::step(ParameterStore& store, const Gradients& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& w = store[static_cast<int>(i)].value;
    const auto& g = grads[static_cast<int>(i)];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]) + opts_.weight_decay * w[j];
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
      w[j] -= static_cast<float>(lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opts_.eps));
    }
  }
}

}  // namespace aigvdet::nn
