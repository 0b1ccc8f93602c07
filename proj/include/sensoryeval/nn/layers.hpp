#pragma once

// Layers with explicit forward/backward passes. Each layer caches what its
// backward pass needs during a training-mode forward call.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "sensoryeval/nn/tensor.hpp"

namespace sensoryeval::nn {

enum class Mode { kEval, kTrain };

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

class Layer {
 public:
  virtual ~Layer() = default;
  /// Inference pass; never mutates the layer, so concurrent calls are safe.
  virtual Tensor infer(const Tensor& x) const = 0;
  /// Training pass; caches what backward() needs.
  virtual Tensor forward_train(const Tensor& x) = 0;
  /// Accumulates parameter gradients and returns the input gradient of the
  /// most recent forward_train() call.
  virtual Tensor backward(const Tensor& grad_out) = 0;

  Tensor forward(const Tensor& x, Mode mode) {
    return mode == Mode::kTrain ? forward_train(x) : infer(x);
  }
  virtual void collect(std::vector<Parameter*>& /*out*/) {}
  virtual std::string kind() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

/// He-normal fill scaled for fan_in inputs.
inline void he_normal(Tensor& t, int fan_in, NormalSource& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (float& v : t.values) v = static_cast<float>(rng.normal() * stddev);
}

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, bool bias)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad),
        weight_(name + ".weight", {out_ch, in_ch, kernel, kernel}) {
    if (bias) bias_ = std::make_unique<Parameter>(name + ".bias", std::vector<int>{out_ch});
  }

  void init(NormalSource& rng) {
    he_normal(weight_.value, in_ch_ * k_ * k_, rng);
    if (bias_) bias_->value.fill(0.0f);
  }

  /// The first layer of a network never needs an input gradient.
  void set_propagate_input_grad(bool on) { propagate_ = on; }

  Tensor forward_train(const Tensor& x) override {
    input_ = x;
    return infer(x);
  }

  Tensor infer(const Tensor& x) const override {
    if (x.rank() != 4 || x.dim(1) != in_ch_) throw ValidationError("conv input shape mismatch");
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = (h + 2 * pad_ - k_) / stride_ + 1;
    const int wo = (w + 2 * pad_ - k_) / stride_ + 1;
    Tensor y({n, out_ch_, ho, wo});
    const int patch = in_ch_ * k_ * k_;
    std::vector<float> cols(static_cast<std::size_t>(patch) * ho * wo);
    ConstMatMap wm(weight_.value.data(), out_ch_, patch);
    for (int s = 0; s < n; ++s) {
      im2col(x.data() + static_cast<std::size_t>(s) * in_ch_ * h * w, h, w, ho, wo, cols.data());
      MatMap ym(y.data() + static_cast<std::size_t>(s) * out_ch_ * ho * wo, out_ch_, ho * wo);
      ym.noalias() = wm * ConstMatMap(cols.data(), patch, ho * wo);
      if (bias_) {
        for (int o = 0; o < out_ch_; ++o) ym.row(o).array() += bias_->value.values[o];
      }
    }
    return y;
  }

  Tensor backward(const Tensor& g) override {
    const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const int ho = g.dim(2), wo = g.dim(3);
    const int patch = in_ch_ * k_ * k_;
    std::vector<float> cols(static_cast<std::size_t>(patch) * ho * wo);
    std::vector<float> dcols(cols.size());
    ConstMatMap wm(weight_.value.data(), out_ch_, patch);
    MatMap dw(weight_.grad.data(), out_ch_, patch);
    Tensor dx;
    if (propagate_) dx = Tensor(input_.shape);
    for (int s = 0; s < n; ++s) {
      im2col(input_.data() + static_cast<std::size_t>(s) * in_ch_ * h * w, h, w, ho, wo,
             cols.data());
      ConstMatMap gm(g.data() + static_cast<std::size_t>(s) * out_ch_ * ho * wo, out_ch_, ho * wo);
      dw.noalias() += gm * ConstMatMap(cols.data(), patch, ho * wo).transpose();
      if (bias_) {
        for (int o = 0; o < out_ch_; ++o) bias_->grad.values[o] += gm.row(o).sum();
      }
      if (propagate_) {
        MatMap(dcols.data(), patch, ho * wo).noalias() = wm.transpose() * gm;
        col2im(dcols.data(), h, w, ho, wo, dx.data() + static_cast<std::size_t>(s) * in_ch_ * h * w);
      }
    }
    return dx;
  }

  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    if (bias_) out.push_back(bias_.get());
  }

  std::string kind() const override { return "conv"; }

  int out_channels() const { return out_ch_; }

 private:
  void im2col(const float* x, int h, int w, int ho, int wo, float* cols) const {
    for (int c = 0; c < in_ch_; ++c) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          float* row = cols + (static_cast<std::size_t>((c * k_ + ky) * k_ + kx)) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                      ? x[(static_cast<std::size_t>(c) * h + iy) * w + ix]
                                      : 0.0f;
            }
          }
        }
      }
    }
  }

  void col2im(const float* cols, int h, int w, int ho, int wo, float* dx) const {
    for (int c = 0; c < in_ch_; ++c) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const float* row = cols + (static_cast<std::size_t>((c * k_ + ky) * k_ + kx)) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= w) continue;
              dx[(static_cast<std::size_t>(c) * h + iy) * w + ix] += row[oy * wo + ox];
            }
          }
        }
      }
    }
  }

  int in_ch_, out_ch_, k_, stride_, pad_;
  Parameter weight_;
  std::unique_ptr<Parameter> bias_;
  bool propagate_ = true;
  Tensor input_;
};

/// Per-channel scale and shift: a batch-norm layer with its statistics
/// folded in, as used when a pretrained network is fine-tuned.
class ChannelAffine final : public Layer {
 public:
  ChannelAffine(std::string name, int channels, float gamma = 1.0f)
      : gamma_(name + ".gamma", {channels}), beta_(name + ".beta", {channels}) {
    gamma_.value.fill(gamma);
  }

  Tensor forward_train(const Tensor& x) override {
    input_ = x;
    return infer(x);
  }

  Tensor infer(const Tensor& x) const override {
    Tensor y = x;
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t hw = x.size() / (static_cast<std::size_t>(n) * c);
    for (int s = 0; s < n; ++s) {
      for (int ch = 0; ch < c; ++ch) {
        float* p = y.data() + (static_cast<std::size_t>(s) * c + ch) * hw;
        const float ga = gamma_.value.values[ch], be = beta_.value.values[ch];
        for (std::size_t i = 0; i < hw; ++i) p[i] = p[i] * ga + be;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& g) override {
    Tensor dx(g.shape);
    const int n = g.dim(0), c = g.dim(1);
    const std::size_t hw = g.size() / (static_cast<std::size_t>(n) * c);
    for (int s = 0; s < n; ++s) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = (static_cast<std::size_t>(s) * c + ch) * hw;
        const float ga = gamma_.value.values[ch];
        double dg = 0.0, db = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          dg += static_cast<double>(g.values[off + i]) * input_.values[off + i];
          db += g.values[off + i];
          dx.values[off + i] = g.values[off + i] * ga;
        }
        gamma_.grad.values[ch] += static_cast<float>(dg);
        beta_.grad.values[ch] += static_cast<float>(db);
      }
    }
    return dx;
  }

  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  std::string kind() const override { return "affine"; }

 private:
  Parameter gamma_;
  Parameter beta_;
  Tensor input_;
};

class Relu final : public Layer {
 public:
  Tensor infer(const Tensor& x) const override {
    Tensor y = x;
    for (float& v : y.values) v = v > 0.0f ? v : 0.0f;
    return y;
  }

  Tensor forward_train(const Tensor& x) override {
    output_ = infer(x);
    return output_;
  }

  Tensor backward(const Tensor& g) override {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(output_.values[i] > 0.0f)) dx.values[i] = 0.0f;
    }
    return dx;
  }

  std::string kind() const override { return "relu"; }

 private:
  Tensor output_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int pad = 0) : k_(kernel), stride_(stride), pad_(pad) {}

  Tensor infer(const Tensor& x) const override { return pool(x, nullptr); }

  Tensor forward_train(const Tensor& x) override {
    input_shape_ = x.shape;
    return pool(x, &argmax_);
  }

  Tensor backward(const Tensor& g) override {
    Tensor dx(input_shape_);
    for (std::size_t i = 0; i < g.size(); ++i) dx.values[argmax_[i]] += g.values[i];
    return dx;
  }

  std::string kind() const override { return "maxpool"; }

 private:
  Tensor pool(const Tensor& x, std::vector<std::size_t>* argmax) const {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = (h + 2 * pad_ - k_) / stride_ + 1;
    const int wo = (w + 2 * pad_ - k_) / stride_ + 1;
    if (ho <= 0 || wo <= 0) throw ValidationError("max-pool input too small");
    Tensor y({n, c, ho, wo});
    if (argmax) argmax->assign(y.size(), 0);
    for (int plane = 0; plane < n * c; ++plane) {
      const std::size_t in_off = static_cast<std::size_t>(plane) * h * w;
      const std::size_t out_off = static_cast<std::size_t>(plane) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_i = in_off;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= w) continue;
              const std::size_t idx = in_off + static_cast<std::size_t>(iy) * w + ix;
              if (x.values[idx] > best) {
                best = x.values[idx];
                best_i = idx;
              }
            }
          }
          y.values[out_off + static_cast<std::size_t>(oy) * wo + ox] = best;
          if (argmax) (*argmax)[out_off + static_cast<std::size_t>(oy) * wo + ox] = best_i;
        }
      }
    }
    return y;
  }

  int k_, stride_, pad_;
  std::vector<std::size_t> argmax_;
  std::vector<int> input_shape_;
};

/// (N, C, H, W) -> (N, C).
class GlobalAvgPool final : public Layer {
 public:
  Tensor forward_train(const Tensor& x) override {
    input_shape_ = x.shape;
    return infer(x);
  }

  Tensor infer(const Tensor& x) const override {
    if (x.rank() != 4) throw ValidationError("global average pooling needs NCHW input");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor y({n, c});
    for (int i = 0; i < n * c; ++i) {
      double acc = 0.0;
      const float* p = x.data() + static_cast<std::size_t>(i) * hw;
      for (std::size_t k = 0; k < hw; ++k) acc += p[k];
      y.values[static_cast<std::size_t>(i)] = static_cast<float>(acc / static_cast<double>(hw));
    }
    return y;
  }

  Tensor backward(const Tensor& g) override {
    Tensor dx(input_shape_);
    const std::size_t hw = static_cast<std::size_t>(input_shape_[2]) * input_shape_[3];
    const float inv = 1.0f / static_cast<float>(hw);
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::fill_n(dx.data() + i * hw, hw, g.values[i] * inv);
    }
    return dx;
  }

  std::string kind() const override { return "gap"; }

 private:
  std::vector<int> input_shape_;
};

/// (N, F) -> (N, units).
class Dense final : public Layer {
 public:
  Dense(std::string name, int in, int units)
      : in_(in), units_(units), weight_(name + ".weight", {units, in}),
        bias_(name + ".bias", {units}) {}

  void init(NormalSource& rng, float bias = 0.0f) {
    he_normal(weight_.value, in_, rng);
    bias_.value.fill(bias);
  }

  Tensor forward_train(const Tensor& x) override {
    input_ = x;
    return infer(x);
  }

  Tensor infer(const Tensor& x) const override {
    if (x.rank() != 2 || x.dim(1) != in_) throw ValidationError("dense input shape mismatch");
    const int n = x.dim(0);
    Tensor y({n, units_});
    MatMap ym(y.data(), n, units_);
    ym.noalias() = ConstMatMap(x.data(), n, in_) * ConstMatMap(weight_.value.data(), units_, in_).transpose();
    for (int s = 0; s < n; ++s) {
      for (int u = 0; u < units_; ++u) ym(s, u) += bias_.value.values[u];
    }
    return y;
  }

  Tensor backward(const Tensor& g) override {
    const int n = g.dim(0);
    ConstMatMap gm(g.data(), n, units_);
    MatMap(weight_.grad.data(), units_, in_).noalias() += gm.transpose() * ConstMatMap(input_.data(), n, in_);
    for (int s = 0; s < n; ++s) {
      for (int u = 0; u < units_; ++u) bias_.grad.values[u] += gm(s, u);
    }
    Tensor dx({n, in_});
    MatMap(dx.data(), n, in_).noalias() = gm * ConstMatMap(weight_.value.data(), units_, in_);
    return dx;
  }

  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  std::string kind() const override { return "dense"; }

  int units() const { return units_; }

 private:
  int in_, units_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

/// Inverted dropout: active only in training mode.
class Dropout final : public Layer {
 public:
  Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must be in [0, 1)");
  }

  void reseed(std::uint64_t seed) { rng_ = NormalSource(seed); }

  double rate() const { return rate_; }

  Tensor infer(const Tensor& x) const override { return x; }

  Tensor forward_train(const Tensor& x) override {
    const float scale = static_cast<float>(1.0 / (1.0 - rate_));
    mask_.resize(x.size());
    Tensor y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = rng_.uniform() >= rate_ ? scale : 0.0f;
      y.values[i] *= mask_[i];
    }
    return y;
  }

  Tensor backward(const Tensor& g) override {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.values[i] *= mask_[i];
    return dx;
  }

  std::string kind() const override { return "dropout"; }

 private:
  double rate_;
  NormalSource rng_;
  std::vector<float> mask_;
};

class Sequential : public Layer {
 public:
  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  void push(LayerPtr layer) { layers_.push_back(std::move(layer)); }

  Tensor infer(const Tensor& x) const override {
    Tensor cur = x;
    for (const auto& l : layers_) cur = l->infer(cur);
    return cur;
  }

  Tensor forward_train(const Tensor& x) override {
    Tensor cur = x;
    for (auto& l : layers_) cur = l->forward_train(cur);
    return cur;
  }

  Tensor backward(const Tensor& g) override {
    Tensor cur = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
  }

  void collect(std::vector<Parameter*>& out) override {
    for (auto& l : layers_) l->collect(out);
  }

  std::string kind() const override { return "sequential"; }

  std::vector<LayerPtr>& layers() { return layers_; }
  const std::vector<LayerPtr>& layers() const { return layers_; }

 private:
  std::vector<LayerPtr> layers_;
};

/// relu(main(x) + shortcut(x)); the shortcut is the identity when empty.
class Residual final : public Layer {
 public:
  Residual(std::unique_ptr<Sequential> main, std::unique_ptr<Sequential> shortcut)
      : main_(std::move(main)), shortcut_(std::move(shortcut)) {}

  Tensor infer(const Tensor& x) const override {
    return merge(main_->infer(x), shortcut_ ? shortcut_->infer(x) : x);
  }

  Tensor forward_train(const Tensor& x) override {
    Tensor y = main_->forward_train(x);
    output_ = merge(std::move(y), shortcut_ ? shortcut_->forward_train(x) : x);
    return output_;
  }

  Tensor backward(const Tensor& g) override {
    Tensor gr = g;
    for (std::size_t i = 0; i < gr.size(); ++i) {
      if (!(output_.values[i] > 0.0f)) gr.values[i] = 0.0f;
    }
    Tensor dx = main_->backward(gr);
    const Tensor ds = shortcut_ ? shortcut_->backward(gr) : gr;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.values[i] += ds.values[i];
    return dx;
  }

  void collect(std::vector<Parameter*>& out) override {
    main_->collect(out);
    if (shortcut_) shortcut_->collect(out);
  }

  std::string kind() const override { return "residual"; }

 private:
  static Tensor merge(Tensor y, const Tensor& s) {
    if (s.shape != y.shape) throw ValidationError("residual branch shapes differ");
    for (std::size_t i = 0; i < y.size(); ++i) {
      const float v = y.values[i] + s.values[i];
      y.values[i] = v > 0.0f ? v : 0.0f;
    }
    return y;
  }

  std::unique_ptr<Sequential> main_;
  std::unique_ptr<Sequential> shortcut_;
  Tensor output_;
};

}  // namespace sensoryeval::nn
