#pragma once

#include <string>
#include <vector>

#include "scdd/core/random.hpp"
#include "scdd/core/tensor.hpp"
#include "scdd/kernels/conv.hpp"

namespace scdd {

/// train: BN normalizes with batch statistics and updates running statistics.
/// eval: BN normalizes with running statistics; nothing is mutated except the
/// per-forward caches.
enum class Mode { train, eval };

/// A trainable tensor and its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);

  /// Kaiming-normal, fan-out mode.
  void initialize(Rng& rng);
  Tensor forward(const Tensor& x);
  /// Returns dx when input_grad is set, otherwise an empty tensor.
  Tensor backward(const Tensor& dy, bool param_grads, bool input_grad);

  int in_channels() const noexcept { return in_channels_; }
  int out_channels() const noexcept { return out_channels_; }

  Tensor weight;
  Tensor weight_grad;

 private:
  kernels::ConvGeometry geometry(const Tensor& x) const;

  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 3;
  int stride_ = 1;
  int pad_ = 1;
  Tensor input_;
};

/// Gradient of an external loss with respect to one BN layer's batch
/// statistics (the mean and population variance of its input).
struct StatGradient {
  std::vector<Real> d_mean;
  std::vector<Real> d_variance;
};

class BatchNorm2d {
 public:
  static constexpr Real kMomentum = 0.1;
  static constexpr Real kEpsilon = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy, const StatGradient* stat_grad, bool param_grads);

  int channels() const noexcept { return static_cast<int>(running_mean.size()); }
  /// Statistics of the most recent forward input (population variance).
  const std::vector<Real>& batch_mean() const noexcept { return batch_mean_; }
  const std::vector<Real>& batch_variance() const noexcept { return batch_var_; }
  /// Pre-normalization activations of the most recent forward.
  const Tensor& last_input() const noexcept { return input_; }

  Tensor gamma;
  Tensor beta;
  Tensor gamma_grad;
  Tensor beta_grad;
  std::vector<Real> running_mean;
  std::vector<Real> running_var;

 private:
  Tensor input_;
  Tensor normalized_;
  std::vector<Real> batch_mean_;
  std::vector<Real> batch_var_;
  std::vector<Real> inv_std_;
  Mode mode_ = Mode::eval;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features);

  /// Weights ~ N(0, std^2), bias zero.
  void initialize(Rng& rng, Real std);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy, bool param_grads, bool input_grad);

  int in_features() const noexcept { return weight.empty() ? 0 : weight.dim(1); }
  int out_features() const noexcept { return weight.empty() ? 0 : weight.dim(0); }
  void append_parameters(std::vector<Parameter>& out, const std::string& prefix);

  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
  Tensor weight_grad;
  Tensor bias_grad;

 private:
  Tensor input_;
};

/// In-place ReLU returning the mask source (the output itself).
void relu_inplace(Tensor& x);
/// dy *= (y > 0).
void relu_backward_inplace(Tensor& dy, const Tensor& y);

}  // namespace scdd
