#include "scdd/netcore/optim.hpp"

#include <cmath>
#include <numbers>

namespace scdd {

Real cosine_lr(Real base, long step, long total) {
  if (total <= 0) return base;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * static_cast<Real>(step) / static_cast<Real>(total)));
}

Sgd::Sgd(std::vector<Parameter> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) velocity_.push_back(Tensor::zeros_like(*p.value));
}

void Sgd::step(Real lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = *params_[i].value;
    const Tensor& g = *params_[i].grad;
    Tensor& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const Real d = g[j] + cfg_.weight_decay * w[j];
      v[j] = cfg_.momentum * v[j] + d;
      w[j] -= lr * v[j];
    }
  }
}

Adam::Adam(std::vector<Parameter> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros_like(*p.value));
    v_.push_back(Tensor::zeros_like(*p.value));
  }
}

void Adam::step(Real lr) {
  ++t_;
  const Real bc1 = 1 - std::pow(cfg_.beta1, static_cast<Real>(t_));
  const Real bc2 = 1 - std::pow(cfg_.beta2, static_cast<Real>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = *params_[i].value;
    const Tensor& g = *params_[i].grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      Real d = g[j];
      if (cfg_.decoupled)
        w[j] -= lr * cfg_.weight_decay * w[j];
      else
        d += cfg_.weight_decay * w[j];
      m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * d;
      v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * d * d;
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.epsilon);
    }
  }
}

}  // namespace scdd
