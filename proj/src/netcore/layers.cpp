#include "scdd/netcore/layers.hpp"

#include <Eigen/Core>
#include <cmath>

#include "scdd/core/errors.hpp"
#include "scdd/core/parallel.hpp"
#include "scdd/kernels/moments.hpp"

namespace scdd {

namespace {
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : weight({out_channels, in_channels, kernel, kernel}),
      weight_grad({out_channels, in_channels, kernel, kernel}),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {}

void Conv2d::initialize(Rng& rng) {
  const Real fan_out = static_cast<Real>(out_channels_) * kernel_ * kernel_;
  const Real stddev = std::sqrt(2.0 / fan_out);
  for (auto& v : weight.values()) v = normal(rng, 0.0, stddev);
}

kernels::ConvGeometry Conv2d::geometry(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels_)
    throw ShapeError("conv expects (N, " + std::to_string(in_channels_) + ", H, W), got " +
                     shape_string(x.shape()));
  return {x.dim(0), in_channels_, x.dim(2), x.dim(3), out_channels_, kernel_, stride_, pad_};
}

Tensor Conv2d::forward(const Tensor& x) {
  const auto g = geometry(x);
  input_ = x;
  Tensor y({g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.span(), weight.span(), y.span());
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool param_grads, bool input_grad) {
  const auto g = geometry(input_);
  if (param_grads) kernels::conv2d_backward_weight(g, input_.span(), dy.span(), weight_grad.span());
  if (!input_grad) return {};
  Tensor dx(input_.shape());
  kernels::conv2d_backward_input(g, dy.span(), weight.span(), dx.span());
  return dx;
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma({channels}, 1.0),
      beta({channels}, 0.0),
      gamma_grad({channels}),
      beta_grad({channels}),
      running_mean(static_cast<std::size_t>(channels), 0.0),
      running_var(static_cast<std::size_t>(channels), 1.0) {}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  const int C = channels();
  if (x.rank() != 4 || x.dim(1) != C)
    throw ShapeError("batchnorm expects (N, " + std::to_string(C) + ", H, W), got " +
                     shape_string(x.shape()));
  const int N = x.dim(0);
  const int HW = x.dim(2) * x.dim(3);
  mode_ = mode;
  input_ = x;
  batch_mean_.assign(static_cast<std::size_t>(C), 0.0);
  batch_var_.assign(static_cast<std::size_t>(C), 0.0);
  kernels::channel_moments(x.span(), N, C, HW, batch_mean_, batch_var_);

  if (mode == Mode::train) {
    const Real count = static_cast<Real>(N) * HW;
    if (count < 2) throw PreconditionError("batchnorm in train mode needs more than one value per channel");
    const Real unbiased = count / (count - 1);
    for (int c = 0; c < C; ++c) {
      running_mean[c] = (1 - kMomentum) * running_mean[c] + kMomentum * batch_mean_[c];
      running_var[c] = (1 - kMomentum) * running_var[c] + kMomentum * batch_var_[c] * unbiased;
    }
  }

  const auto& mean = mode == Mode::train ? batch_mean_ : running_mean;
  const auto& var = mode == Mode::train ? batch_var_ : running_var;
  inv_std_.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) inv_std_[c] = 1.0 / std::sqrt(var[c] + kEpsilon);

  normalized_ = Tensor(x.shape());
  Tensor y(x.shape());
  SCDD_PARALLEL_FOR
  for (int c = 0; c < C; ++c) {
    const Real m = mean[c], s = inv_std_[c], gm = gamma[c], bt = beta[c];
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      const Real* in = x.data() + off;
      Real* xh = normalized_.data() + off;
      Real* out = y.data() + off;
      SCDD_SIMD
      for (int i = 0; i < HW; ++i) {
        xh[i] = (in[i] - m) * s;
        out[i] = gm * xh[i] + bt;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy, const StatGradient* stat_grad, bool param_grads) {
  const int C = channels();
  const int N = input_.dim(0);
  const int HW = input_.dim(2) * input_.dim(3);
  const Real count = static_cast<Real>(N) * HW;
  if (!dy.same_shape(input_)) throw ShapeError("batchnorm backward: gradient shape mismatch");
  if (stat_grad && (stat_grad->d_mean.size() != static_cast<std::size_t>(C) ||
                    stat_grad->d_variance.size() != static_cast<std::size_t>(C)))
    throw ShapeError("batchnorm backward: statistic gradient has wrong channel count");

  Tensor dx(input_.shape());
  SCDD_PARALLEL_FOR
  for (int c = 0; c < C; ++c) {
    Real sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * normalized_[off + i];
      }
    }
    if (param_grads) {
      gamma_grad[c] += sum_dy_xhat;
      beta_grad[c] += sum_dy;
    }
    const Real g = gamma[c] * inv_std_[c];
    const Real dm = stat_grad ? stat_grad->d_mean[c] / count : 0.0;
    const Real dv = stat_grad ? 2.0 * stat_grad->d_variance[c] / count : 0.0;
    const Real mu = batch_mean_[c];
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) {
        Real v;
        if (mode_ == Mode::train) {
          v = g * (dy[off + i] - sum_dy / count - normalized_[off + i] * sum_dy_xhat / count);
        } else {
          v = g * dy[off + i];
        }
        dx[off + i] = v + dm + dv * (input_[off + i] - mu);
      }
    }
  }
  return dx;
}

Linear::Linear(int in_features, int out_features)
    : weight({out_features, in_features}),
      bias({out_features}),
      weight_grad({out_features, in_features}),
      bias_grad({out_features}) {}

void Linear::initialize(Rng& rng, Real std) {
  for (auto& v : weight.values()) v = normal(rng, 0.0, std);
  bias.zero();
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_features())
    throw ShapeError("linear expects (N, " + std::to_string(in_features()) + "), got " +
                     shape_string(x.shape()));
  input_ = x;
  const int N = x.dim(0), O = out_features();
  Tensor y({N, O});
  MatrixMap Y(y.data(), N, O);
  Y.noalias() = ConstMatrixMap(x.data(), N, in_features()) *
                ConstMatrixMap(weight.data(), O, in_features()).transpose();
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias.data(), O);
  return y;
}

Tensor Linear::backward(const Tensor& dy, bool param_grads, bool input_grad) {
  const int N = input_.dim(0), I = in_features(), O = out_features();
  if (dy.rank() != 2 || dy.dim(0) != N || dy.dim(1) != O)
    throw ShapeError("linear backward: gradient shape mismatch");
  const ConstMatrixMap DY(dy.data(), N, O);
  if (param_grads) {
    MatrixMap(weight_grad.data(), O, I).noalias() += DY.transpose() * ConstMatrixMap(input_.data(), N, I);
    Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias_grad.data(), O) += DY.colwise().sum();
  }
  if (!input_grad) return {};
  Tensor dx({N, I});
  MatrixMap(dx.data(), N, I).noalias() = DY * ConstMatrixMap(weight.data(), O, I);
  return dx;
}

void Linear::append_parameters(std::vector<Parameter>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", &weight, &weight_grad});
  out.push_back({prefix + ".bias", &bias, &bias_grad});
}

void relu_inplace(Tensor& x) {
  for (auto& v : x.values()) v = v > 0 ? v : 0;
}

void relu_backward_inplace(Tensor& dy, const Tensor& y) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y[i] > 0)) dy[i] = 0;
}

}  // namespace scdd
