#pragma once

#include <cmath>
#include <vector>

#include "sensoryeval/nn/tensor.hpp"

namespace sensoryeval::nn {

/// Adaptive-moment optimizer. Frozen parameters are skipped entirely, so
/// their values stay bit-identical across steps.
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params) {
    if (m_.size() != params.size()) {
      m_.assign(params.size(), {});
      v_.assign(params.size(), {});
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Parameter& prm = *params[p];
      if (!prm.trainable) continue;
      if (m_[p].size() != prm.value.size()) {
        m_[p].assign(prm.value.size(), 0.0f);
        v_[p].assign(prm.value.size(), 0.0f);
      }
      for (std::size_t i = 0; i < prm.value.size(); ++i) {
        const double g = prm.grad.values[i];
        m_[p][i] = static_cast<float>(beta1_ * m_[p][i] + (1.0 - beta1_) * g);
        v_[p][i] = static_cast<float>(beta2_ * v_[p][i] + (1.0 - beta2_) * g * g);
        const double mhat = m_[p][i] / c1;
        const double vhat = v_[p][i] / c2;
        prm.value.values[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

inline void zero_grad(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->grad.fill(0.0f);
}

}  // namespace sensoryeval::nn
